#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "golden_scenario.hpp"
#include "icot/model.hpp"

using namespace icot;

namespace {

ElementSequence bos_then(std::initializer_list<TokenId> ids) {
  ElementSequence seq{TextToken{kBos}};
  for (TokenId id : ids) {
    seq.emplace_back(TextToken{id});
  }
  return seq;
}

Model no_positions_model() {
  ModelConfig mc;
  mc.use_positional_encoding = false;
  return Model{mc};
}

}  // namespace

TEST(EncodeImage, ShapeOfThirtyTwoPixelImage) {
  const Model model;
  const VisualTokenCache cache = model.encode_image(Image{32, 32, Rgb{1, 2, 3}}, 8);
  EXPECT_EQ(cache.size(), 16u);
  EXPECT_EQ(cache.tokens.cols(), model.width());
  EXPECT_EQ(cache.grid.patch_rows, 4u);
  EXPECT_EQ(cache.grid.patch_cols, 4u);
}

TEST(EncodeImage, UniformImageGivesIdenticalRows) {
  const Model model;
  const VisualTokenCache cache = model.encode_image(Image{32, 32, Rgb{255, 255, 255}}, 8);
  for (std::size_t r = 1; r < cache.size(); ++r) {
    EXPECT_TRUE(std::ranges::equal(cache.tokens.row(r), cache.tokens.row(0))) << "row " << r;
  }
}

TEST(EncodeImage, OnePatchChangeTouchesOneRow) {
  const Model model;
  Image a = fixtures::golden_image();
  Image b = a;
  b.at(9, 26) = Rgb{0, 255, 0};  // patch row 3, col 1
  const auto ca = model.encode_image(a, 8);
  const auto cb = model.encode_image(b, 8);
  std::size_t differing = 0;
  for (std::size_t r = 0; r < ca.size(); ++r) {
    if (!std::ranges::equal(ca.tokens.row(r), cb.tokens.row(r))) {
      ++differing;
      EXPECT_EQ(r, 13u);
    }
  }
  EXPECT_EQ(differing, 1u);
}

TEST(EncodeImage, NonDivisibleImageIsGeometryError) {
  const Model model;
  EXPECT_THROW(model.encode_image(Image{30, 32}, 8), GeometryError);
}

TEST(Prefill, DeterministicAcrossCallsAndInstances) {
  const ElementSequence seq = bos_then({'a', 'b', 'c', kImageStart});
  const Model m1;
  const Model m2;
  const PrefillResult a = m1.prefill(seq);
  const PrefillResult b = m2.prefill(seq);
  EXPECT_EQ(a.output.logits, b.output.logits);
  EXPECT_EQ(a.output.attention, b.output.attention);
  EXPECT_EQ(a.cache, b.cache);
}

TEST(Prefill, CacheLengthMatchesInput) {
  const Model model;
  const PrefillResult r = model.prefill(bos_then({1, 2, 3, 4, 5, 6}));
  for (std::size_t l = 0; l < r.cache.n_layers(); ++l) {
    EXPECT_EQ(r.cache.layer(l).size(), 7u);
  }
  EXPECT_EQ(r.cache.forwarded_positions(), 7u);
}

TEST(Prefill, RejectsBadInput) {
  const Model model;
  EXPECT_THROW(model.prefill({}), UsageError);
  EXPECT_THROW(model.prefill({TextToken{'x'}}), UsageError);
  EXPECT_THROW(model.prefill({TextToken{kBos}, ImagePlaceholder{}}), UsageError);
  EXPECT_THROW(model.prefill({TextToken{kBos}, VisualRows{Matrix{2, 3}, {}}}), GeometryError);
}

TEST(Prefill, GoldenGreedyFromBos) {
  const Model model;
  PrefillResult pre = model.prefill({TextToken{kBos}});
  StepOutput out = std::move(pre.output);
  std::vector<TokenId> ids;
  for (int i = 0; i < 8; ++i) {
    ids.push_back(out.next_token());
    out = model.decode_step(pre.cache, ids.back());
  }
  EXPECT_EQ(ids, fixtures::read_ids(fixtures::data_dir() / "golden_bos_greedy8.txt"));
}

TEST(DecodeStep, GoldenSixtyFourStepTranscript) {
  const Model model;
  const auto golden = fixtures::read_ids(fixtures::data_dir() / "golden_scenario_greedy64.txt");
  ASSERT_EQ(golden.size(), 64u);
  EXPECT_EQ(fixtures::reference_greedy(model, fixtures::golden_image(), fixtures::golden_prompt(), 64, false), golden);
}

TEST(DecodeStep, GrowsCacheByOneAndRecordIsCausal) {
  const Model model;
  PrefillResult pre = model.prefill(bos_then({'h', 'i'}));
  for (TokenId t : {10u, 20u, 30u}) {
    const std::size_t before = pre.cache.length();
    const StepOutput out = model.decode_step(pre.cache, t);
    EXPECT_EQ(pre.cache.length(), before + 1);
    EXPECT_EQ(out.attention.key_count(), pre.cache.length());
  }
}

TEST(DecodeStep, AttentionRowsNormalizeOverRandomSteps) {
  const Model model;
  std::mt19937 rng{7};
  std::uniform_int_distribution<TokenId> tok{0, kVocabSize - 1};
  PrefillResult pre = model.prefill({TextToken{kBos}});
  for (int step = 0; step < 1000; ++step) {
    const StepOutput out = model.decode_step(pre.cache, tok(rng));
    for (std::size_t l = 0; l < out.attention.n_layers(); ++l) {
      for (std::size_t h = 0; h < out.attention.n_heads(); ++h) {
        double sum = 0.0;
        for (double w : out.attention.row(l, h)) {
          ASSERT_GE(w, 0.0);
          sum += w;
        }
        ASSERT_NEAR(sum, 1.0, 1e-5) << "step " << step;
      }
    }
  }
}

TEST(DecodeStep, ArgmaxTieGoesToLowestId) {
  std::vector<double> logits(kVocabSize, -1.0);
  logits[5] = 3.0;
  logits[9] = 3.0;
  EXPECT_EQ(greedy_argmax(logits), 5u);
}

TEST(DecodeStep, NonFiniteInputIsNumericError) {
  const Model model;
  PrefillResult pre = model.prefill({TextToken{kBos}});
  std::vector<double> bad(model.width(), std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(model.forward(pre.cache, bad), NumericError);
}

TEST(AppendEmbeddings, ZeroRowsLeavesCacheUnchanged) {
  const Model model;
  PrefillResult pre = model.prefill(bos_then({'x'}));
  const KVCache before = pre.cache;
  EXPECT_FALSE(model.append_embeddings(pre.cache, Matrix{}).has_value());
  EXPECT_EQ(pre.cache, before);
}

TEST(AppendEmbeddings, GrowsByRowCount) {
  const Model model;
  PrefillResult pre = model.prefill(bos_then({'x'}));
  const auto visual = model.encode_image(fixtures::golden_image(), 8);
  Matrix rows;
  for (std::size_t r : {2u, 5u, 11u}) {
    rows.push_row(visual.tokens.row(r));
  }
  const std::size_t before = pre.cache.forwarded_positions();
  ASSERT_TRUE(model.append_embeddings(pre.cache, rows).has_value());
  EXPECT_EQ(pre.cache.length(), 5u);
  EXPECT_EQ(pre.cache.forwarded_positions(), before + 3);
}

TEST(AppendEmbeddings, WidthMismatchIsGeometryError) {
  const Model model;
  PrefillResult pre = model.prefill({TextToken{kBos}});
  EXPECT_THROW(model.append_embeddings(pre.cache, Matrix{1, model.width() + 1}), GeometryError);
}

TEST(AppendEmbeddings, FirstLayerMatchesPrefillWithoutPositions) {
  const Model model = no_positions_model();
  const auto visual = model.encode_image(fixtures::golden_image(), 8);
  ElementSequence seq{TextToken{kBos}, VisualRows{visual.tokens, {}}, TextToken{'q'}};
  PrefillResult pre = model.prefill(seq);
  Matrix rows;
  rows.push_row(visual.tokens.row(6));
  rows.push_row(visual.tokens.row(9));
  const std::size_t offset = pre.cache.length();
  model.append_embeddings(pre.cache, rows);
  const auto& layer0 = pre.cache.layer(0);
  for (std::size_t k = 0; k < 2; ++k) {
    const KvEntry& appended = layer0[offset + k];
    const KvEntry& original = layer0[1 + (k == 0 ? 6 : 9)];
    for (std::size_t c = 0; c < model.width(); ++c) {
      EXPECT_NEAR(appended.key[c], original.key[c], 1e-6);
      EXPECT_NEAR(appended.value[c], original.value[c], 1e-6);
    }
  }
}

TEST(AppendEmbeddings, FirstLayerDiffersWithPositions) {
  const Model model;
  const auto visual = model.encode_image(fixtures::golden_image(), 8);
  PrefillResult pre = model.prefill({TextToken{kBos}, VisualRows{visual.tokens, {}}});
  Matrix row;
  row.push_row(visual.tokens.row(6));
  model.append_embeddings(pre.cache, row);
  const auto& layer0 = pre.cache.layer(0);
  double delta = 0.0;
  for (std::size_t c = 0; c < model.width(); ++c) {
    delta = std::max(delta, std::abs(layer0.back().key[c] - layer0[7].key[c]));
  }
  EXPECT_GT(delta, 1e-3);
}

TEST(KvCopy, CopiesAreBitEqualInGivenOrder) {
  const Model model;
  PrefillResult pre = model.prefill(bos_then({'a', 'b', 'c', 'd'}));
  const std::size_t forwarded = pre.cache.forwarded_positions();
  const std::vector<std::size_t> positions{3, 1};
  kv_copy(pre.cache, positions);
  EXPECT_EQ(pre.cache.forwarded_positions(), forwarded);
  for (std::size_t l = 0; l < pre.cache.n_layers(); ++l) {
    const auto& entries = pre.cache.layer(l);
    ASSERT_EQ(entries.size(), 7u);
    EXPECT_EQ(entries[5], entries[3]);
    EXPECT_EQ(entries[6], entries[1]);
    EXPECT_EQ(entries[5].position, 3u);
  }
}

TEST(KvCopy, OutOfRangeLeavesCacheUntouched) {
  const Model model;
  PrefillResult pre = model.prefill(bos_then({'a'}));
  const KVCache before = pre.cache;
  const std::vector<std::size_t> positions{0, 2};
  EXPECT_THROW(kv_copy(pre.cache, positions), IndexError);
  EXPECT_EQ(pre.cache, before);
}

TEST(ModelConcurrency, ParallelSessionsOverSharedParamsAgree) {
  const Model model;
  const auto expected = fixtures::reference_greedy(model, fixtures::golden_image(), fixtures::golden_prompt(), 32, true);
  std::vector<std::vector<TokenId>> results(8);
  std::vector<std::thread> threads;
  for (auto& slot : results) {
    threads.emplace_back([&] {
      slot = fixtures::reference_greedy(model, fixtures::golden_image(), fixtures::golden_prompt(), 32, true);
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  for (const auto& r : results) {
    EXPECT_EQ(r, expected);
  }
}

TEST(ModelConfigTest, WidthMustDivideHeads) {
  ModelConfig mc;
  mc.n_heads = 3;
  EXPECT_THROW(Model{mc}, UsageError);
}
