#include "segpost/io.hpp"

#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace segpost {
namespace {

MaskSet sample_set() {
  std::mt19937_64 rng(4);
  MaskSet s{10, 12, {}};
  for (int i = 0; i < 4; ++i)
    s.instances.push_back(ScoredMask{testing::random_rect(rng, 10, 12), 0.2 * (i + 1), i % 2});
  return s;
}

TEST(MaskSetJson, RoundTrip) {
  const auto s = sample_set();
  std::stringstream ss(mask_set_to_json(s).dump());
  const auto back = read_mask_set(ss);
  EXPECT_EQ(back.height, 10u);
  EXPECT_EQ(back.width, 12u);
  ASSERT_EQ(back.instances.size(), s.instances.size());
  for (std::size_t i = 0; i < s.instances.size(); ++i) {
    EXPECT_EQ(back.instances[i].mask, s.instances[i].mask);
    EXPECT_EQ(back.instances[i].score, s.instances[i].score);
    EXPECT_EQ(back.instances[i].category, s.instances[i].category);
  }
}

TEST(MaskSetJson, MalformedDocumentsRejected) {
  for (const char* doc : {
           "not json",
           R"({"height": 2})",
           R"({"height": 2, "width": 2, "instances": {}})",
           R"({"height": 2, "width": 2, "instances": [{"score": 0.5, "category": 0, "counts": [1, 2]}]})",
           R"({"height": 2, "width": 2, "instances": [{"score": 1.5, "category": 0, "counts": [4]}]})",
           R"({"height": 2, "width": 2, "instances": [{"score": 0.0, "category": 0, "counts": [4]}]})",
           R"({"height": 2, "width": 2, "instances": [{"score": "x", "category": 0, "counts": [4]}]})",
       }) {
    std::stringstream ss(doc);
    EXPECT_THROW(read_mask_set(ss), MalformedInput) << doc;
  }
}

TEST(ResultJson, Schema) {
  const auto s = sample_set();
  SuppressionResult r{{2, 0}, {0.6, 0.1}};
  const auto j = result_to_json(s, r);
  ASSERT_EQ(j.at("kept").size(), 2u);
  const auto& k0 = j["kept"][0];
  EXPECT_EQ(k0.at("index").get<std::size_t>(), 2u);
  EXPECT_EQ(k0.at("score").get<double>(), 0.6);
  EXPECT_EQ(k0.at("category").get<int>(), 0);
  const Box b = mask_to_box(s.instances[2].mask);
  EXPECT_EQ(k0.at("box").get<std::vector<int>>(),
            (std::vector<int>{b.x_min, b.y_min, b.x_max, b.y_max}));
}

TEST(Tensor, RoundTripAndConversions) {
  const FeatureMap f(2, 3, 2, {0.5, -1.0, 2.0, 0.25, 3.0, -4.0, 1.5, 0.0, 8.0, -0.5, 1.0, 2.0});
  std::stringstream ss;
  write_tensor(ss, to_tensor(f));
  const auto t = read_tensor(ss);
  EXPECT_EQ(t.kind, "feature");
  EXPECT_EQ(t.shape, (std::vector<std::size_t>{2, 3, 2}));
  EXPECT_EQ(to_feature_map(t), f);  // values are exact in float32

  const KernelGrid k(2, 2, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  std::stringstream sk;
  write_tensor(sk, to_tensor(k));
  const auto kg = to_kernel_grid(read_tensor(sk), 2);
  EXPECT_EQ(kg.kernel(3)[1], 8.0);
  EXPECT_THROW(to_feature_map(to_tensor(k)), MalformedInput);

  const CategoryGrid c(1, 2, {0.25, 0.75});
  EXPECT_EQ(to_category_grid(to_tensor(c)).score(0, 1), 0.75);
}

TEST(Tensor, MalformedFilesRejected) {
  std::stringstream good;
  write_tensor(good, Tensor{"feature", {1, 1, 2}, {1.0f, 2.0f}});
  const std::string bytes = good.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(read_tensor(truncated), MalformedInput);
  std::stringstream trailing(bytes + "x");
  EXPECT_THROW(read_tensor(trailing), MalformedInput);
  std::stringstream badkind(R"({"shape":[1,1,1],"kind":"weights"})" "\n" + std::string(4, '\0'));
  EXPECT_THROW(read_tensor(badkind), MalformedInput);
  std::stringstream badshape(R"({"shape":[1,1],"kind":"feature"})" "\n" + std::string(4, '\0'));
  EXPECT_THROW(read_tensor(badshape), MalformedInput);
  std::stringstream empty;
  EXPECT_THROW(read_tensor(empty), MalformedInput);
  std::ostringstream out;
  EXPECT_THROW(write_tensor(out, Tensor{"feature", {1, 1, 3}, {1.0f}}), DimensionMismatch);
}

}  // namespace
}  // namespace segpost
