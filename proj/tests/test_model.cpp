// Copyright 2026 The detinfer Authors.
// SPDX-License-Identifier: Apache-2.0

#include <vector>

#include <gtest/gtest.h>

#include "detinfer/errors.hpp"
#include "detinfer/model.hpp"

namespace {

using namespace detinfer;

const Model& model() {
  static const Model m = init_model(ModelConfig{});
  return m;
}

Matrix run(KvCache& kv, const std::vector<TokenId>& tokens, const SchedulePolicy& policy) {
  const SpanInput span{&kv, tokens};
  return model().forward(std::span<const SpanInput>(&span, 1), policy);
}

const std::vector<TokenId> kPrompt = {5, 77, 130, 2, 9, 200, 41, 41, 13, 250, 1, 64};

TEST(ModelConfig, RejectsBadDimensions) {
  ModelConfig c;
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.mantissa_bits = 60;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, InitIsReproducibleAndSeedDependent) {
  EXPECT_EQ(init_model(ModelConfig{}).checksum(), model().checksum());
  ModelConfig other;
  other.seed = 43;
  EXPECT_NE(init_model(other).checksum(), model().checksum());
}

TEST(Model, OneLogitRowPerInputToken) {
  KvCache kv = model().make_cache();
  const Matrix logits = run(kv, kPrompt, SchedulePolicy::pinned());
  EXPECT_EQ(logits.rows, kPrompt.size());
  EXPECT_EQ(logits.cols, ModelConfig{}.vocab_size);
  EXPECT_EQ(kv.total_len(), kPrompt.size());
  EXPECT_EQ(kv.committed_len(), 0u);
}

// Under a pinned policy a token's logits do not depend on how the sequence
// was chunked into passes.
TEST(Model, PinnedIncrementalMatchesSinglePass) {
  const auto pinned = SchedulePolicy::pinned();
  KvCache whole = model().make_cache();
  const Matrix all = run(whole, kPrompt, pinned);

  KvCache step = model().make_cache();
  for (std::size_t i = 0; i < kPrompt.size(); ++i) {
    const Matrix one = run(step, {kPrompt[i]}, pinned);
    EXPECT_EQ(std::vector<double>(one.row(0).begin(), one.row(0).end()),
              std::vector<double>(all.row(i).begin(), all.row(i).end()))
        << "position " << i;
  }
  EXPECT_EQ(step, whole);
}

TEST(Model, LaterTokensDoNotAffectEarlierRows) {
  for (const auto& policy : {SchedulePolicy::pinned(), SchedulePolicy::adaptive()}) {
    KvCache a = model().make_cache();
    KvCache b = model().make_cache();
    auto altered = kPrompt;
    altered.back() = 3;
    altered[altered.size() - 2] = 99;
    const Matrix la = run(a, kPrompt, policy);
    const Matrix lb = run(b, altered, policy);
    for (std::size_t i = 0; i + 2 < kPrompt.size(); ++i) {
      EXPECT_EQ(std::vector<double>(la.row(i).begin(), la.row(i).end()),
                std::vector<double>(lb.row(i).begin(), lb.row(i).end()));
    }
  }
}

TEST(Model, CoBatchedSpansMatchSoloRunsWhenPinned) {
  const auto pinned = SchedulePolicy::pinned();
  const std::vector<TokenId> other = {17, 18, 19, 20, 21};
  KvCache a = model().make_cache();
  KvCache b = model().make_cache();
  const SpanInput spans[] = {{&a, kPrompt}, {&b, other}};
  const Matrix joint = model().forward(spans, pinned);

  KvCache solo = model().make_cache();
  const Matrix alone = run(solo, other, pinned);
  for (std::size_t i = 0; i < other.size(); ++i) {
    EXPECT_EQ(std::vector<double>(joint.row(kPrompt.size() + i).begin(), joint.row(kPrompt.size() + i).end()),
              std::vector<double>(alone.row(i).begin(), alone.row(i).end()));
  }
  EXPECT_EQ(b, solo);
}

TEST(Model, BatchSizeChangesFastPathBits) {
  // The adaptive policy picks a different split once the pass has more rows,
  // so the same sequence decoded alone and beside 40 other rows disagrees
  // somewhere in its logits.
  const auto adaptive = SchedulePolicy::adaptive(8);
  KvCache alone = model().make_cache();
  const Matrix solo = run(alone, kPrompt, adaptive);
  KvCache a = model().make_cache();
  KvCache filler = model().make_cache();
  const std::vector<TokenId> noise(40, 7);
  const SpanInput spans[] = {{&a, kPrompt}, {&filler, noise}};
  const Matrix joint = model().forward(spans, adaptive);
  bool differs = false;
  for (std::size_t i = 0; i < kPrompt.size(); ++i) {
    differs = differs || std::vector<double>(joint.row(i).begin(), joint.row(i).end()) !=
                             std::vector<double>(solo.row(i).begin(), solo.row(i).end());
  }
  EXPECT_TRUE(differs);
}

TEST(Model, RejectsBadTokensAndLeavesCacheUntouched) {
  KvCache kv = model().make_cache();
  run(kv, {1, 2, 3}, SchedulePolicy::pinned());
  const KvCache before = kv;
  EXPECT_THROW(run(kv, {4, 256}, SchedulePolicy::pinned()), ShapeError);
  EXPECT_THROW(run(kv, {-1}, SchedulePolicy::pinned()), ShapeError);
  EXPECT_EQ(kv, before);
}

TEST(Model, RejectsSequencesPastMaxLen) {
  ModelConfig c;
  c.max_seq_len = 8;
  const Model small = init_model(c);
  KvCache kv = small.make_cache();
  const std::vector<TokenId> nine(9, 1);
  const SpanInput span{&kv, nine};
  EXPECT_THROW(small.forward(std::span<const SpanInput>(&span, 1), SchedulePolicy::pinned()), ShapeError);
}

TEST(KvCache, TruncateAndCommitRespectTheConsistentPrefix) {
  KvCache kv = model().make_cache();
  kv.extend(10);
  kv.commit(4);
  kv.truncate(6);
  EXPECT_EQ(kv.total_len(), 6u);
  EXPECT_THROW(kv.truncate(3), EngineFault);
  EXPECT_THROW(kv.commit(7), EngineFault);
  EXPECT_THROW(kv.commit(3), EngineFault);
  kv.commit(6);
  EXPECT_EQ(kv.committed_len(), 6u);
}

}  // namespace
