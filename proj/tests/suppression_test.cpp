#include "segpost/suppression.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "segpost/oracles.hpp"
#include "test_util.hpp"

namespace segpost {
namespace {

using testing::random_sorted_masks;

// Masks are irrelevant when the matrix is supplied; the scores matter.
std::vector<ScoredMask> with_scores(std::vector<double> scores) {
  std::vector<ScoredMask> v;
  for (double s : scores) v.push_back({BinaryMask::filled(1, 1), s, 0});
  return v;
}

IoUMatrix three_mask_ious() { return IoUMatrix(3, {0, 0.8, 0.1, 0, 0, 0.7, 0, 0, 0}); }

std::vector<double> by_index(const SuppressionResult& r, std::size_t n) {
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < r.size(); ++k) out[r.kept_indices[k]] = r.updated_scores[k];
  return out;
}

TEST(SortByScore, Examples) {
  EXPECT_EQ(sort_by_score(std::vector<double>{0.5, 0.9, 0.7}),
            (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(sort_by_score(std::vector<double>{0.5, 0.5}), (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(sort_by_score(std::vector<double>{}).empty());
}

TEST(Decay, LinearExamples) {
  EXPECT_DOUBLE_EQ(decay_linear(0.5, 0.0), 0.5);
  EXPECT_EQ(decay_linear(0.0, 0.0), 1.0);
  EXPECT_NEAR(decay_linear(0.7, 0.8), 1.5, 1e-12);
  EXPECT_THROW(decay_linear(0.3, 1.0), SingularityError);
}

TEST(Decay, GaussianExamples) {
  EXPECT_NEAR(decay_gauss(0.5, 0.0, 0.5), 0.6065306597126334, 1e-15);
  EXPECT_EQ(decay_gauss(0.37, 0.37, 0.5), 1.0);
  EXPECT_NEAR(decay_gauss(0.0, 0.5, 0.5), 1.6487212707001282, 1e-15);
  EXPECT_THROW(decay_gauss(0.1, 0.0, 0.0), DomainError);
  EXPECT_THROW(DecayFn::gaussian(-1.0), DomainError);
}

TEST(MatrixNms, SingleMask) {
  const auto m = with_scores({0.9});
  const auto r = matrix_nms(m, IoUMatrix(1), DecayFn::gaussian());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.updated_scores[0], 0.9);
}

TEST(MatrixNms, TwoMasksGaussian) {
  const auto m = with_scores({0.9, 0.8});
  const auto r = matrix_nms(m, IoUMatrix(2, {0, 0.5, 0, 0}), DecayFn::gaussian(0.5));
  const auto s = by_index(r, 2);
  EXPECT_EQ(s[0], 0.9);
  EXPECT_NEAR(s[1], 0.4852245277701068, 1e-12);
}

TEST(MatrixNms, ThreeMasksLinearSparesChainedSuppression) {
  const auto m = with_scores({0.9, 0.8, 0.7});
  const auto decay = matrix_nms_decay(three_mask_ious(), DecayFn::linear());
  EXPECT_EQ(decay[0], 1.0);
  EXPECT_NEAR(decay[1], 0.2, 1e-12);
  EXPECT_NEAR(decay[2], 0.9, 1e-12);
  const auto s = by_index(matrix_nms(m, three_mask_ious(), DecayFn::linear()), 3);
  EXPECT_NEAR(s[0], 0.9, 1e-12);
  EXPECT_NEAR(s[1], 0.16, 1e-12);
  EXPECT_NEAR(s[2], 0.63, 1e-12);
}

TEST(MatrixNms, SizeMismatch) {
  EXPECT_THROW(matrix_nms(with_scores({0.9, 0.8}), IoUMatrix(3), DecayFn::gaussian()),
               DimensionMismatch);
}

TEST(MatrixNms, LinearSingularityTreatedAsInfinite) {
  // Mask 1 duplicates mask 0 (cmax_1 = 1); as a suppressor it never wins.
  const IoUMatrix ious(3, {0, 1.0, 0.0, 0, 0, 0.9, 0, 0, 0});
  const auto d = matrix_nms_decay(ious, DecayFn::linear());
  EXPECT_EQ(d[0], 1.0);
  EXPECT_EQ(d[1], 0.0);
  EXPECT_EQ(d[2], 1.0);
  // A zero-decayed prediction is never kept.
  const auto r = matrix_nms(with_scores({0.9, 0.8, 0.7}), ious, DecayFn::linear());
  EXPECT_EQ(std::count(r.kept_indices.begin(), r.kept_indices.end(), 1u), 0);
}

TEST(MatrixNms, SelectionAppliesThresholdAndTopK) {
  const auto m = with_scores({0.9, 0.8, 0.7});
  const auto r = matrix_nms(m, three_mask_ious(), DecayFn::linear(), Selection{0.5, 1});
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.kept_indices[0], 0u);
  const auto r2 = matrix_nms(m, three_mask_ious(), DecayFn::linear(), Selection{0.5, 10});
  EXPECT_EQ(r2.kept_indices, (std::vector<std::size_t>{0, 2}));
}

class MatrixNmsRandom : public ::testing::TestWithParam<DecayKind> {};

TEST_P(MatrixNmsRandom, MatchesNaiveDoubleLoop) {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<std::size_t> count(1, 60);
  const DecayFn decay = GetParam() == DecayKind::kLinear ? DecayFn::linear()
                                                          : DecayFn::gaussian(0.5);
  for (int t = 0; t < 60; ++t) {
    const auto masks = random_sorted_masks(rng, count(rng));
    const auto ious = pairwise_iou_matrix(masks);
    std::vector<double> s;
    for (const auto& m : masks) s.push_back(m.score);
    const auto got = matrix_nms_scores(s, ious, decay);
    const auto want = oracle::matrix_nms_scores(s, ious, decay);
    for (std::size_t j = 0; j < s.size(); ++j) {
      ASSERT_NEAR(got[j], want[j], 1e-6);
      ASSERT_LE(got[j], s[j]);
    }
    // Top score is never decayed.
    ASSERT_EQ(got[0], s[0]);
    // Same bits with several workers.
    ASSERT_EQ(matrix_nms_scores(s, ious, decay, 4), got);
  }
}

INSTANTIATE_TEST_SUITE_P(BothDecays, MatrixNmsRandom,
                         ::testing::Values(DecayKind::kLinear, DecayKind::kGaussian));

TEST(MatrixNms, KeptSetInvariantUnderScoreScaling) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    auto masks = random_sorted_masks(rng, 25);
    const auto ious = pairwise_iou_matrix(masks);
    const Selection all{0.0, 1000};
    const auto base = matrix_nms(masks, ious, DecayFn::gaussian(), all);
    for (auto& m : masks) m.score *= 0.37;
    const auto scaled = matrix_nms(masks, ious, DecayFn::gaussian(), all);
    std::set<std::size_t> a(base.kept_indices.begin(), base.kept_indices.end());
    std::set<std::size_t> b(scaled.kept_indices.begin(), scaled.kept_indices.end());
    ASSERT_EQ(a, b);
  }
}

TEST(HardNms, Examples) {
  const auto two = with_scores({0.9, 0.8});
  EXPECT_EQ(hard_nms(two, IoUMatrix(2, {0, 0.6, 0, 0}), 0.5).kept_indices,
            (std::vector<std::size_t>{0}));
  EXPECT_EQ(hard_nms(two, IoUMatrix(2, {0, 0.4, 0, 0}), 0.5).kept_indices,
            (std::vector<std::size_t>{0, 1}));
  const auto r = hard_nms(with_scores({0.9, 0.8, 0.7}), three_mask_ious(), 0.5);
  EXPECT_EQ(r.kept_indices, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(r.updated_scores, (std::vector<double>{0.9, 0.7}));
  EXPECT_THROW(hard_nms(two, IoUMatrix(3), 0.5), DimensionMismatch);
}

TEST(FastNms, Examples) {
  EXPECT_EQ(fast_nms(with_scores({0.9, 0.8, 0.7}), three_mask_ious(), 0.5).kept_indices,
            (std::vector<std::size_t>{0}));
  EXPECT_EQ(fast_nms(with_scores({0.9, 0.8, 0.7}), IoUMatrix(3), 0.5).kept_indices,
            (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(fast_nms(with_scores({0.9}), IoUMatrix(1), 0.5).kept_indices,
            (std::vector<std::size_t>{0}));
}

TEST(FastNms, SubsetOfHardAndMatchesOracles) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> thr(0.1, 0.9);
  for (int t = 0; t < 100; ++t) {
    const auto masks = random_sorted_masks(rng, 30);
    const auto ious = pairwise_iou_matrix(masks);
    const double th = thr(rng);
    const auto hard = hard_nms(masks, ious, th).kept_indices;
    const auto fast = fast_nms(masks, ious, th).kept_indices;
    ASSERT_EQ(hard, oracle::greedy_nms(ious, th));
    ASSERT_EQ(fast, oracle::fast_nms(ious, th));
    ASSERT_TRUE(std::includes(hard.begin(), hard.end(), fast.begin(), fast.end()));
  }
}

TEST(SoftNms, TwoMasksAgreeWithMatrix) {
  const auto m = with_scores({0.9, 0.8});
  const IoUMatrix ious(2, {0, 0.5, 0, 0});
  const auto s = by_index(soft_nms(m, ious, DecayFn::gaussian(0.5), 0.0), 2);
  EXPECT_EQ(s[0], 0.9);
  EXPECT_NEAR(s[1], 0.4852245277701068, 1e-12);
  EXPECT_EQ(s, by_index(matrix_nms(m, ious, DecayFn::gaussian(0.5)), 2));
}

TEST(SoftNms, OnDemandIouMatchesPrecomputed) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 40; ++t) {
    const auto masks = random_sorted_masks(rng, 20);
    const auto ious = pairwise_iou_matrix(masks);
    const auto a = soft_nms(masks, DecayFn::gaussian(), 0.05);
    const auto b = soft_nms(masks, ious, DecayFn::gaussian(), 0.05);
    ASSERT_EQ(a.kept_indices, b.kept_indices);
    ASSERT_EQ(a.updated_scores, b.updated_scores);
  }
}

TEST(SoftNms, DisjointMasksUnchanged) {
  const auto m = with_scores({0.9, 0.6, 0.3});
  const auto r = soft_nms(m, IoUMatrix(3), DecayFn::linear(), 0.0);
  EXPECT_EQ(r.kept_indices, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(r.updated_scores, (std::vector<double>{0.9, 0.6, 0.3}));
}

TEST(SoftNms, ThreeMaskLinearSequentialTrace) {
  // Round 1 keeps mask 0: (0.8 * 0.2, 0.7 * 0.9) = (0.16, 0.63).
  // Round 2 keeps mask 2 (0.63) and decays mask 1 to 0.16 * 0.3 = 0.048.
  const auto m = with_scores({0.9, 0.8, 0.7});
  const auto r = soft_nms(m, three_mask_ious(), DecayFn::linear(), 0.0);
  EXPECT_EQ(r.kept_indices, (std::vector<std::size_t>{0, 2, 1}));
  const auto s = by_index(r, 3);
  EXPECT_NEAR(s[0], 0.9, 1e-12);
  EXPECT_NEAR(s[1], 0.048, 1e-12);
  EXPECT_NEAR(s[2], 0.63, 1e-12);
  const auto mx = by_index(matrix_nms(m, three_mask_ious(), DecayFn::linear()), 3);
  EXPECT_GT(std::abs(mx[1] - s[1]), 0.1);
}

TEST(SoftNms, ThresholdDropsAndStopsSuppressing) {
  // Mask 1 falls under 0.5 after mask 0 and must not suppress mask 2.
  const IoUMatrix ious(3, {0, 0.9, 0, 0, 0, 0.9, 0, 0, 0});
  const auto r = soft_nms(with_scores({0.9, 0.8, 0.7}), ious, DecayFn::linear(), 0.5);
  EXPECT_EQ(r.kept_indices, (std::vector<std::size_t>{0, 2}));
  EXPECT_NEAR(r.updated_scores[1], 0.7, 1e-15);
}

TEST(SoftNms, MatchesOracleOnRandomScenes) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 50; ++t) {
    const auto masks = random_sorted_masks(rng, 25);
    const auto ious = pairwise_iou_matrix(masks);
    std::vector<double> s;
    for (const auto& m : masks) s.push_back(m.score);
    for (const auto& decay : {DecayFn::linear(), DecayFn::gaussian(0.5)}) {
      const auto got = by_index(soft_nms(masks, ious, decay, 0.05), s.size());
      const auto want = oracle::soft_nms_scores(
          s, [&](std::size_t a, std::size_t b) { return ious.pair(a, b); }, decay, 0.05);
      ASSERT_EQ(got, want);
    }
  }
}

TEST(Suppress, EmptyInput) {
  EXPECT_EQ(suppress(std::vector<ScoredMask>{}, SuppressionConfig{}).size(), 0u);
}

TEST(Suppress, CategoriesNeverSuppressEachOther) {
  std::vector<ScoredMask> m{{BinaryMask::filled(4, 4), 0.9, 0},
                            {BinaryMask::filled(4, 4), 0.8, 1}};
  for (Method method : {Method::kHard, Method::kSoft, Method::kFast, Method::kMatrix}) {
    SuppressionConfig cfg;
    cfg.method = method;
    const auto r = suppress(m, cfg);
    ASSERT_EQ(r.kept_indices, (std::vector<std::size_t>{0, 1})) << method_name(method);
    ASSERT_EQ(r.updated_scores, (std::vector<double>{0.9, 0.8}));
    cfg.class_agnostic = true;
    const auto merged = suppress(m, cfg);
    ASSERT_TRUE(merged.size() == 1 || merged.updated_scores.back() < 0.8)
        << method_name(method);
  }
}

TEST(Suppress, MixedSceneEqualsPerCategoryComposition) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> cat(0, 2);
  std::uniform_real_distribution<double> score(0.05, 1.0);
  for (Method method : {Method::kHard, Method::kSoft, Method::kFast, Method::kMatrix}) {
    for (int t = 0; t < 15; ++t) {
      std::vector<ScoredMask> masks;
      for (int i = 0; i < 30; ++i)
        masks.push_back({testing::random_rect(rng, 12, 12), score(rng), cat(rng)});
      SuppressionConfig cfg;
      cfg.method = method;
      cfg.score_threshold = 0.0;
      cfg.top_k = 1000;
      const auto got = by_index(suppress(masks, cfg), masks.size());
      const auto want = oracle::per_category_scores(masks, cfg);
      for (std::size_t i = 0; i < masks.size(); ++i)
        ASSERT_NEAR(got[i], want[i], 1e-12) << method_name(method) << " #" << i;
    }
  }
}

TEST(Suppress, GlobalThresholdAndTopK) {
  std::mt19937_64 rng(2);
  std::vector<ScoredMask> masks;
  for (int i = 0; i < 40; ++i)
    masks.push_back({testing::random_rect(rng, 10, 10), 0.01 + 0.02 * i, i % 3});
  SuppressionConfig cfg;
  cfg.top_k = 5;
  cfg.score_threshold = 0.2;
  const auto r = suppress(masks, cfg);
  ASSERT_LE(r.size(), 5u);
  for (std::size_t k = 0; k < r.size(); ++k) {
    ASSERT_GE(r.updated_scores[k], 0.2);
    ASSERT_LE(r.updated_scores[k], masks[r.kept_indices[k]].score);
    if (k) {
      ASSERT_GE(r.updated_scores[k - 1], r.updated_scores[k]);
    }
  }
}

TEST(Suppress, ConfigValidation) {
  SuppressionConfig cfg;
  cfg.top_k = 0;
  EXPECT_THROW(suppress(std::vector<ScoredMask>{}, cfg), DomainError);
  cfg.top_k = 1;
  cfg.iou_threshold = 1.5;
  EXPECT_THROW(suppress(std::vector<ScoredMask>{}, cfg), DomainError);
  EXPECT_THROW(parse_method("greedy"), MalformedInput);
  EXPECT_EQ(parse_method("matrix"), Method::kMatrix);
}

}  // namespace
}  // namespace segpost
