#include "segpost/maskcore.hpp"

#include <cstdint>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "segpost/oracles.hpp"
#include "test_util.hpp"

namespace segpost {
namespace {

using testing::random_mask;
using testing::random_rect;

BinaryMask from_bits(std::size_t h, std::size_t w, std::vector<std::uint8_t> bits) {
  return BinaryMask(h, w, bits);
}

TEST(BinaryMask, RejectsBadDimensions) {
  EXPECT_THROW(BinaryMask(0, 3), DimensionMismatch);
  EXPECT_THROW(from_bits(2, 2, {1, 0, 1}), DimensionMismatch);
}

TEST(BinaryMask, PacksAcrossWordBoundary) {
  BinaryMask m(3, 30);  // 90 bits, two words
  m.set(2, 29);
  m.set(2, 4);  // bit 64
  EXPECT_TRUE(m.at(2, 29));
  EXPECT_TRUE(m.bit(64));
  EXPECT_EQ(mask_area(m), 2u);
  EXPECT_EQ(mask_area(BinaryMask::filled(3, 30)), 90u);
}

TEST(Rle, EncodeExamples) {
  EXPECT_EQ(rle_encode(from_bits(2, 3, {0, 1, 1, 0, 0, 1})).counts(),
            (std::vector<RleMask::Count>{1, 2, 2, 1}));
  EXPECT_EQ(rle_encode(BinaryMask(2, 2)).counts(), (std::vector<RleMask::Count>{4}));
  EXPECT_EQ(rle_encode(BinaryMask::filled(2, 2)).counts(),
            (std::vector<RleMask::Count>{0, 4}));
}

TEST(Rle, DecodeExamples) {
  EXPECT_EQ(rle_decode(RleMask(2, 3, {1, 2, 2, 1})).to_bits(),
            (std::vector<std::uint8_t>{0, 1, 1, 0, 0, 1}));
  EXPECT_EQ(rle_decode(RleMask(2, 2, {4})), BinaryMask(2, 2));
}

TEST(Rle, MalformedCountsRejected) {
  EXPECT_THROW(RleMask(2, 3, {1, 2, 2}), MalformedInput);
  EXPECT_THROW(RleMask(2, 3, {1, 0, 5}), MalformedInput);
  EXPECT_THROW(RleMask(2, 3, {}), MalformedInput);
  EXPECT_NO_THROW(RleMask(2, 3, {0, 6}));
}

TEST(Rle, RoundTripProperty) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 40);
  std::uniform_real_distribution<double> dens(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    const auto m = random_mask(rng, dim(rng), dim(rng), dens(rng));
    const auto r = rle_encode(m);
    ASSERT_EQ(rle_decode(r), m);
    ASSERT_EQ(rle_encode(rle_decode(r)), r);
  }
}

TEST(MaskArea, Examples) {
  EXPECT_EQ(mask_area(from_bits(2, 3, {0, 1, 1, 0, 0, 1})), 3u);
  EXPECT_EQ(mask_area(BinaryMask(5, 5)), 0u);
  EXPECT_EQ(mask_area(BinaryMask::filled(4, 4)), 16u);
}

TEST(MaskIou, Examples) {
  const auto a = from_bits(2, 2, {1, 1, 0, 0});
  const auto full = BinaryMask::filled(2, 2);
  EXPECT_EQ(mask_iou(a, a), 1.0);
  EXPECT_EQ(mask_iou(a, from_bits(2, 2, {0, 0, 1, 1})), 0.0);
  EXPECT_EQ(mask_iou(a, full), 0.5);
  EXPECT_EQ(mask_iou(BinaryMask(2, 2), BinaryMask(2, 2)), 0.0);
  EXPECT_THROW(mask_iou(a, BinaryMask(2, 3)), DimensionMismatch);
}

TEST(MaskIou, SymmetryBoundsAndPixelOracle) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    const auto a = random_mask(rng, 9, 13, 0.3), b = random_mask(rng, 9, 13, 0.6);
    const double v = mask_iou(a, b);
    ASSERT_EQ(v, mask_iou(b, a));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_DOUBLE_EQ(v, oracle::pixel_iou(a, b));
    if (mask_area(a) > 0) {
      ASSERT_EQ(mask_iou(a, a), 1.0);
    }
  }
}

TEST(PairwiseIou, SmallCases) {
  std::vector<BinaryMask> one{BinaryMask::filled(3, 3)};
  const auto m1 = pairwise_iou_matrix(one);
  ASSERT_EQ(m1.size(), 1u);
  EXPECT_EQ(m1(0, 0), 0.0);

  std::vector<BinaryMask> two{BinaryMask::filled(3, 3), BinaryMask::filled(3, 3)};
  const auto m2 = pairwise_iou_matrix(two);
  EXPECT_EQ(m2(0, 1), 1.0);
  EXPECT_EQ(m2(1, 0), 0.0);
  EXPECT_EQ(m2(0, 0), 0.0);
  EXPECT_EQ(m2(1, 1), 0.0);
}

TEST(PairwiseIou, MatchesScalarLoopBitExactly) {
  std::mt19937_64 rng(77);
  for (std::size_t n : {3u, 17u, 64u}) {
    std::vector<BinaryMask> masks;
    for (std::size_t i = 0; i < n; ++i) masks.push_back(random_rect(rng, 20, 70));
    const auto m = pairwise_iou_matrix(masks);
    const auto table = oracle::iou_table(masks);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(m(i, j), table[i][j]) << i << "," << j;
  }
}

TEST(PairwiseIou, ThreadCountDoesNotChangeBits) {
  std::mt19937_64 rng(3);
  std::vector<BinaryMask> masks;
  for (int i = 0; i < 41; ++i) masks.push_back(random_mask(rng, 12, 12, 0.4));
  const auto a = pairwise_iou_matrix(masks, 1);
  for (std::size_t t : {2u, 3u, 8u}) EXPECT_EQ(pairwise_iou_matrix(masks, t), a);
}

TEST(PairwiseIou, DimensionMismatch) {
  std::vector<BinaryMask> masks{BinaryMask(2, 2), BinaryMask(2, 3)};
  EXPECT_THROW(pairwise_iou_matrix(masks), DimensionMismatch);
}

TEST(IoUMatrix, ValidatingConstructor) {
  EXPECT_NO_THROW(IoUMatrix(2, {0, 0.5, 0, 0}));
  EXPECT_THROW(IoUMatrix(2, {0, 0.5, 0.5, 0}), MalformedInput);
  EXPECT_THROW(IoUMatrix(2, {0, 1.5, 0, 0}), MalformedInput);
  EXPECT_THROW(IoUMatrix(2, {0, 0.5, 0}), DimensionMismatch);
}

TEST(MaskToBox, Examples) {
  BinaryMask m(4, 5);
  m.set(1, 1);
  m.set(2, 3);
  EXPECT_EQ(mask_to_box(m), (Box{1, 1, 3, 2}));
  BinaryMask one(3, 3);
  one.set(0, 0);
  EXPECT_EQ(mask_to_box(one), (Box{0, 0, 0, 0}));
  EXPECT_EQ(mask_to_box(BinaryMask::filled(6, 9)), (Box{0, 0, 8, 5}));
  EXPECT_THROW(mask_to_box(BinaryMask(3, 3)), EmptyMaskError);
}

TEST(MaskToBox, InvertsBoxPainting) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> ry(0, 30), rx(0, 70);
  for (int t = 0; t < 200; ++t) {
    int y0 = ry(rng), y1 = ry(rng), x0 = rx(rng), x1 = rx(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    const Box b{x0, y0, x1, y1};
    ASSERT_EQ(mask_to_box(box_to_mask(b, 31, 71)), b);
  }
}

TEST(BoxIou, Examples) {
  const Box a{0, 0, 1, 1};
  EXPECT_EQ(box_iou(a, a), 1.0);
  EXPECT_EQ(box_iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_DOUBLE_EQ(box_iou(a, Box{1, 1, 2, 2}), 1.0 / 7.0);
}

TEST(BoxIou, AgreesWithPaintedMaskIou) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 100; ++t) {
    const auto ma = random_rect(rng, 15, 15), mb = random_rect(rng, 15, 15);
    ASSERT_DOUBLE_EQ(box_iou(mask_to_box(ma), mask_to_box(mb)), mask_iou(ma, mb));
  }
}

}  // namespace
}  // namespace segpost
