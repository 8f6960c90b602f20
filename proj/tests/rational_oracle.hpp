// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

// Exact-rational reference for reduction trees: parses a plan's nested-pair
// text and evaluates it with arbitrary-precision rationals, rounding every
// combine to nearest-even at the given mantissa width.

#pragma once

#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace oracle {

using Rational = boost::multiprecision::cpp_rational;
using Integer = boost::multiprecision::cpp_int;

inline Rational pow2(int e) {
  Integer one = 1;
  return e >= 0 ? Rational(Integer(one << e)) : Rational(Integer(1), Integer(one << -e));
}

inline Rational round_nearest_even(const Rational& x, int mantissa_bits) {
  if (x == 0) {
    return x;
  }
  const Rational a = x < 0 ? Rational(-x) : x;
  int e = static_cast<int>(std::floor(std::log2(static_cast<double>(a))));
  while (pow2(e) > a) {
    --e;
  }
  while (pow2(e + 1) <= a) {
    ++e;
  }
  const Rational scale = pow2(mantissa_bits - e);
  const Rational q = a * scale;
  Integer fl = boost::multiprecision::numerator(q) / boost::multiprecision::denominator(q);
  const Rational rem = q - Rational(fl);
  if (rem > Rational(1, 2) || (rem == Rational(1, 2) && (fl & 1) == 1)) {
    ++fl;
  }
  const Rational r = Rational(fl) / scale;
  return x < 0 ? Rational(-r) : r;
}

class TreeEvaluator {
 public:
  TreeEvaluator(const std::string& text, const std::vector<double>& leaves, int mantissa_bits)
      : text_(text), leaves_(leaves), bits_(mantissa_bits) {}

  Rational run() {
    const Rational r = node();
    skip_space();
    if (pos_ != text_.size()) {
      throw std::runtime_error("trailing text in plan");
    }
    return r;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && text_[pos_] == ' ') {
      ++pos_;
    }
  }

  Rational node() {
    skip_space();
    if (text_.at(pos_) == '(') {
      ++pos_;
      const Rational left = node();
      const Rational right = node();
      skip_space();
      if (text_.at(pos_) != ')') {
        throw std::runtime_error("expected ')'");
      }
      ++pos_;
      return round_nearest_even(left + right, bits_);
    }
    std::size_t idx = 0;
    bool any = false;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      idx = idx * 10 + static_cast<std::size_t>(text_[pos_++] - '0');
      any = true;
    }
    if (!any) {
      throw std::runtime_error("expected leaf index");
    }
    return Rational(leaves_.at(idx));
  }

  const std::string& text_;
  const std::vector<double>& leaves_;
  int bits_;
  std::size_t pos_ = 0;
};

inline double evaluate_tree(const std::string& text, const std::vector<double>& leaves,
                            int mantissa_bits) {
  return static_cast<double>(TreeEvaluator(text, leaves, mantissa_bits).run());
}

}  // namespace oracle
