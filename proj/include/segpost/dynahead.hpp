#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "segpost/common.hpp"
#include "segpost/maskcore.hpp"
#include "segpost/suppression.hpp"

namespace segpost {

// Dense H x W x C tensor, channel-fastest (HWC).
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t height, std::size_t width, std::size_t channels)
      : FeatureMap(height, width, channels,
                   std::vector<double>(height * width * channels, 0.0)) {}
  FeatureMap(std::size_t height, std::size_t width, std::size_t channels,
             std::vector<double> data)
      : h_(height), w_(width), c_(channels), data_(std::move(data)) {
    if (h_ == 0 || w_ == 0 || c_ == 0)
      throw DimensionMismatch("feature map dimensions must be >= 1");
    if (data_.size() != h_ * w_ * c_)
      throw DimensionMismatch("feature map payload size mismatch");
    for (double v : data_)
      if (!std::isfinite(v)) throw DomainError("feature map has non-finite value");
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t channels() const { return c_; }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * w_ + x) * c_ + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * w_ + x) * c_ + c];
  }
  std::span<const double> pixel(std::size_t y, std::size_t x) const {
    return {data_.data() + (y * w_ + x) * c_, c_};
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> data_;
};

// Per-cell predicted kernels, S x S x D. D must be E (1x1 kernels) or 9E
// (3x3 kernels) for the E-channel mask feature they will be applied to.
// A 3x3 kernel is flattened as [c][ky][kx].
class KernelGrid {
 public:
  KernelGrid() = default;
  KernelGrid(std::size_t grid_size, std::size_t kernel_dim,
             std::size_t feature_channels, std::vector<double> data)
      : s_(grid_size), d_(kernel_dim), e_(feature_channels), data_(std::move(data)) {
    if (s_ == 0 || e_ == 0) throw DimensionMismatch("kernel grid is empty");
    if (d_ != e_ && d_ != 9 * e_)
      throw DimensionMismatch("kernel dim " + std::to_string(d_) +
                              " is neither E nor 9E for E = " + std::to_string(e_));
    if (data_.size() != s_ * s_ * d_)
      throw DimensionMismatch("kernel grid payload size mismatch");
    for (double v : data_)
      if (!std::isfinite(v)) throw DomainError("kernel grid has non-finite value");
  }

  std::size_t grid_size() const { return s_; }
  std::size_t kernel_dim() const { return d_; }
  std::size_t feature_channels() const { return e_; }
  bool is_3x3() const { return d_ == 9 * e_; }
  std::span<const double> kernel(std::size_t k) const {
    return {data_.data() + k * d_, d_};
  }
  std::span<const double> data() const { return data_; }

 private:
  std::size_t s_ = 0, d_ = 0, e_ = 0;
  std::vector<double> data_;
};

// Per-cell category scores, S x S x C, each in [0, 1].
class CategoryGrid {
 public:
  CategoryGrid() = default;
  CategoryGrid(std::size_t grid_size, std::size_t num_classes,
               std::vector<double> data)
      : s_(grid_size), c_(num_classes), data_(std::move(data)) {
    if (s_ == 0 || c_ == 0) throw DimensionMismatch("category grid is empty");
    if (data_.size() != s_ * s_ * c_)
      throw DimensionMismatch("category grid payload size mismatch");
    for (double v : data_)
      if (!(v >= 0.0 && v <= 1.0))
        throw DomainError("category score outside [0,1]");
  }

  std::size_t grid_size() const { return s_; }
  std::size_t num_classes() const { return c_; }
  double score(std::size_t k, std::size_t c) const { return data_[k * c_ + c]; }
  std::span<const double> data() const { return data_; }

 private:
  std::size_t s_ = 0, c_ = 0;
  std::vector<double> data_;
};

// Post-sigmoid mask probabilities, strictly inside (0, 1).
class SoftMask {
 public:
  SoftMask() = default;
  SoftMask(std::size_t height, std::size_t width, std::vector<double> values)
      : h_(height), w_(width), v_(std::move(values)) {
    if (h_ == 0 || w_ == 0) throw DimensionMismatch("soft mask is empty");
    if (v_.size() != h_ * w_) throw DimensionMismatch("soft mask size mismatch");
    for (double v : v_)
      if (!(v > 0.0 && v < 1.0))
        throw DomainError("soft mask value outside (0,1)");
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::span<const double> values() const { return v_; }

 private:
  std::size_t h_ = 0, w_ = 0;
  std::vector<double> v_;
};

// Raw (pre-sigmoid) single-channel response map.
struct RawMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

inline std::size_t grid_index(std::size_t i, std::size_t j, std::size_t grid_size) {
  if (i >= grid_size || j >= grid_size)
    throw DomainError("grid cell (" + std::to_string(i) + ", " +
                      std::to_string(j) + ") outside S = " +
                      std::to_string(grid_size));
  return i * grid_size + j;
}

// Two channels: x (column) then y (row), each mapped linearly from index 0 to
// -1 and index dim-1 to +1. A unit dimension maps to 0.
inline FeatureMap coord_channels(std::size_t height, std::size_t width) {
  auto lin = [](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0
                  : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  FeatureMap out(height, width, 2);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      out.at(y, x, 0) = lin(x, width);
      out.at(y, x, 1) = lin(y, height);
    }
  return out;
}

// Channel-wise concatenation of two maps with equal spatial size.
inline FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw DimensionMismatch("concat needs equal spatial dims");
  FeatureMap out(a.height(), a.width(), a.channels() + b.channels());
  for (std::size_t y = 0; y < a.height(); ++y)
    for (std::size_t x = 0; x < a.width(); ++x) {
      std::size_t c = 0;
      for (double v : a.pixel(y, x)) out.at(y, x, c++) = v;
      for (double v : b.pixel(y, x)) out.at(y, x, c++) = v;
    }
  return out;
}

inline RawMask dynamic_conv_1x1(const FeatureMap& feature,
                                std::span<const double> kernel) {
  if (kernel.size() != feature.channels())
    throw DimensionMismatch("1x1 kernel length " + std::to_string(kernel.size()) +
                            " != feature channels " +
                            std::to_string(feature.channels()));
  RawMask out{feature.height(), feature.width(),
              std::vector<double>(feature.height() * feature.width())};
  const std::size_t e = feature.channels();
  const double* f = feature.data().data();
  for (std::size_t p = 0; p < out.values.size(); ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < e; ++c) acc += f[p * e + c] * kernel[c];
    out.values[p] = acc;
  }
  return out;
}

// 3x3 cross-correlation with zero padding 1, same output size. Accumulates
// in (c, ky, kx) order.
inline RawMask dynamic_conv_3x3(const FeatureMap& feature,
                                std::span<const double> kernel) {
  const std::size_t e = feature.channels();
  if (kernel.size() != 9 * e)
    throw DimensionMismatch("3x3 kernel length " + std::to_string(kernel.size()) +
                            " != 9 * " + std::to_string(e));
  const auto h = static_cast<long>(feature.height());
  const auto w = static_cast<long>(feature.width());
  RawMask out{feature.height(), feature.width(),
              std::vector<double>(feature.height() * feature.width())};
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t c = 0; c < e; ++c)
        for (long ky = 0; ky < 3; ++ky) {
          const long sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (long kx = 0; kx < 3; ++kx) {
            const long sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            acc += feature.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c) *
                   kernel[c * 9 + static_cast<std::size_t>(ky * 3 + kx)];
          }
        }
      out.values[static_cast<std::size_t>(y * w + x)] = acc;
    }
  return out;
}

// Dispatches on kernel length: E -> 1x1, 9E -> 3x3.
inline RawMask dynamic_conv(const FeatureMap& feature, std::span<const double> kernel) {
  if (kernel.size() == feature.channels()) return dynamic_conv_1x1(feature, kernel);
  return dynamic_conv_3x3(feature, kernel);
}

inline double sigmoid(double x) {
  // Kept strictly inside (0, 1) even where exp saturates.
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return std::clamp(1.0 / (1.0 + std::exp(-x)), lo, hi);
}

inline SoftMask to_soft_mask(const RawMask& raw) {
  std::vector<double> v(raw.values.size());
  for (std::size_t p = 0; p < v.size(); ++p) v[p] = sigmoid(raw.values[p]);
  return SoftMask(raw.height, raw.width, std::move(v));
}

// Values >= threshold become foreground.
inline BinaryMask binarize(const SoftMask& soft, double threshold = 0.5) {
  BinaryMask m(soft.height(), soft.width());
  const auto v = soft.values();
  for (std::size_t p = 0; p < v.size(); ++p)
    if (v[p] >= threshold) m.set(p / soft.width(), p % soft.width());
  return m;
}

// Half-pixel-centre (align_corners = false) bilinear 2x upsampling.
inline FeatureMap bilinear_upsample_2x(const FeatureMap& in) {
  const std::size_t h = in.height(), w = in.width(), c = in.channels();
  FeatureMap out(2 * h, 2 * w, c);
  auto axis = [](std::size_t dst, std::size_t n, std::size_t& i0,
                 std::size_t& i1, double& t) {
    double src = (static_cast<double>(dst) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    i0 = std::min(static_cast<std::size_t>(src), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    t = src - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < 2 * h; ++y) {
    std::size_t y0, y1;
    double ty;
    axis(y, h, y0, y1, ty);
    for (std::size_t x = 0; x < 2 * w; ++x) {
      std::size_t x0, x1;
      double tx;
      axis(x, w, x0, x1, tx);
      for (std::size_t k = 0; k < c; ++k) {
        const double top = (1.0 - tx) * in.at(y0, x0, k) + tx * in.at(y0, x1, k);
        const double bot = (1.0 - tx) * in.at(y1, x0, k) + tx * in.at(y1, x1, k);
        out.at(y, x, k) = (1.0 - ty) * top + ty * bot;
      }
    }
  }
  return out;
}

struct GroupNormParams {
  std::size_t groups = 1;
  double epsilon = 1e-5;
  std::vector<double> gamma;  // per channel
  std::vector<double> beta;   // per channel

  // min(32, C); group_norm rejects it when it does not divide C.
  static std::size_t default_groups(std::size_t channels) {
    return std::min<std::size_t>(32, channels);
  }

  static GroupNormParams identity(std::size_t channels) {
    return {default_groups(channels), 1e-5, std::vector<double>(channels, 1.0),
            std::vector<double>(channels, 0.0)};
  }
};

// Normalizes each channel group over (H, W, group channels) to zero mean and
// unit population variance, then applies the per-channel affine.
inline FeatureMap group_norm(const FeatureMap& in, const GroupNormParams& p) {
  const std::size_t c = in.channels();
  if (p.groups == 0 || c % p.groups)
    throw DimensionMismatch("channels " + std::to_string(c) +
                            " not divisible by groups " + std::to_string(p.groups));
  if (p.gamma.size() != c || p.beta.size() != c)
    throw DimensionMismatch("group norm affine size mismatch");
  if (!(p.epsilon > 0.0)) throw DomainError("group norm epsilon must be > 0");
  const std::size_t per = c / p.groups;
  const std::size_t hw = in.height() * in.width();
  const auto src = in.data();
  FeatureMap out(in.height(), in.width(), c);
  auto dst = out.data();
  const double count = static_cast<double>(hw * per);
  for (std::size_t g = 0; g < p.groups; ++g) {
    double mean = 0.0;
    for (std::size_t q = 0; q < hw; ++q)
      for (std::size_t k = g * per; k < (g + 1) * per; ++k) mean += src[q * c + k];
    mean /= count;
    double var = 0.0;
    for (std::size_t q = 0; q < hw; ++q)
      for (std::size_t k = g * per; k < (g + 1) * per; ++k) {
        const double d = src[q * c + k] - mean;
        var += d * d;
      }
    var /= count;
    const double inv = 1.0 / std::sqrt(var + p.epsilon);
    for (std::size_t q = 0; q < hw; ++q)
      for (std::size_t k = g * per; k < (g + 1) * per; ++k)
        dst[q * c + k] = (src[q * c + k] - mean) * inv * p.gamma[k] + p.beta[k];
  }
  return out;
}

inline FeatureMap relu(FeatureMap in) {
  for (double& v : in.data()) v = std::max(v, 0.0);
  return in;
}

// Dense convolution weights [out][in][k][k], odd k, zero padding k/2, no bias.
struct ConvWeights {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_size = 1;
  std::vector<double> data;

  double at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return data[((o * in_channels + i) * kernel_size + ky) * kernel_size + kx];
  }

  void validate() const {
    if (kernel_size % 2 == 0) throw DimensionMismatch("conv kernel size must be odd");
    if (data.size() != out_channels * in_channels * kernel_size * kernel_size)
      throw DimensionMismatch("conv weight payload size mismatch");
  }
};

inline FeatureMap conv2d(const FeatureMap& in, const ConvWeights& wts) {
  wts.validate();
  if (wts.in_channels != in.channels())
    throw DimensionMismatch("conv expects " + std::to_string(wts.in_channels) +
                            " input channels, got " + std::to_string(in.channels()));
  const long h = static_cast<long>(in.height()), w = static_cast<long>(in.width());
  const long k = static_cast<long>(wts.kernel_size), pad = k / 2;
  FeatureMap out(in.height(), in.width(), wts.out_channels);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t o = 0; o < wts.out_channels; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < wts.in_channels; ++i)
          for (long ky = 0; ky < k; ++ky) {
            const long sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            for (long kx = 0; kx < k; ++kx) {
              const long sx = x + kx - pad;
              if (sx < 0 || sx >= w) continue;
              acc += in.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), i) *
                     wts.at(o, i, static_cast<std::size_t>(ky), static_cast<std::size_t>(kx));
            }
          }
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), o) = acc;
      }
  return out;
}

// conv -> group norm -> ReLU.
struct ConvNormLayer {
  ConvWeights conv;
  GroupNormParams norm;

  FeatureMap operator()(const FeatureMap& in) const {
    return relu(group_norm(conv2d(in, conv), norm));
  }
};

// Fixed parameters of the pyramid fusion. stages[l] holds the l
// (3x3 conv, GN, ReLU, 2x upsample) stages of level l; the deepest level's
// first stage takes two extra coordinate input channels when it has any
// stages. `output` is the final 1x1 conv + GN + ReLU producing E channels.
struct FusionWeights {
  std::vector<std::vector<ConvNormLayer>> stages;
  ConvNormLayer output;

  // Deterministic He-style normal weights with unit GN affine.
  static FusionWeights seeded(std::size_t num_levels, std::size_t channels,
                              std::size_t out_channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto make_conv = [&](std::size_t out, std::size_t in, std::size_t k) {
      std::normal_distribution<double> nd(
          0.0, std::sqrt(2.0 / static_cast<double>(in * k * k)));
      ConvWeights cw{out, in, k, std::vector<double>(out * in * k * k)};
      for (double& v : cw.data) v = nd(rng);
      return cw;
    };
    FusionWeights fw;
    fw.stages.resize(num_levels);
    for (std::size_t l = 0; l < num_levels; ++l)
      for (std::size_t s = 0; s < l; ++s) {
        const bool coords = (l + 1 == num_levels) && s == 0;
        fw.stages[l].push_back(ConvNormLayer{
            make_conv(channels, channels + (coords ? 2 : 0), 3),
            GroupNormParams::identity(channels)});
      }
    fw.output = ConvNormLayer{make_conv(out_channels, channels, 1),
                              GroupNormParams::identity(out_channels)};
    return fw;
  }
};

// Feature pyramid ordered finest (1/4 scale) to coarsest; level l is 2^l
// times smaller than level 0 in each spatial dimension.
struct PyramidLevels {
  std::vector<FeatureMap> levels;
  FusionWeights weights;
};

namespace detail {

inline void validate_pyramid(const PyramidLevels& p) {
  if (p.levels.empty()) throw DimensionMismatch("pyramid has no levels");
  if (p.weights.stages.size() != p.levels.size())
    throw DimensionMismatch("fusion weights cover " +
                            std::to_string(p.weights.stages.size()) +
                            " levels, pyramid has " + std::to_string(p.levels.size()));
  const auto& base = p.levels[0];
  for (std::size_t l = 0; l < p.levels.size(); ++l) {
    const auto& lv = p.levels[l];
    if ((lv.height() << l) != base.height() || (lv.width() << l) != base.width())
      throw DimensionMismatch("pyramid level " + std::to_string(l) +
                              " is not 2^" + std::to_string(l) +
                              " times smaller than level 0");
    if (lv.channels() != base.channels())
      throw DimensionMismatch("pyramid levels disagree on channel count");
    if (p.weights.stages[l].size() != l)
      throw DimensionMismatch("level " + std::to_string(l) + " needs " +
                              std::to_string(l) + " fusion stages");
  }
}

}  // namespace detail

// Runs every level through its stages up to 1/4 scale, sums, then applies
// the output layer. Coordinates are appended to the deepest level first
// (only when that level has stages, i.e. the pyramid has >= 2 levels).
inline FeatureMap fuse_pyramid(const PyramidLevels& pyramid) {
  detail::validate_pyramid(pyramid);
  const std::size_t num = pyramid.levels.size();
  FeatureMap sum;
  for (std::size_t l = 0; l < num; ++l) {
    FeatureMap x = pyramid.levels[l];
    if (l + 1 == num && l > 0)
      x = concat_channels(x, coord_channels(x.height(), x.width()));
    for (const auto& stage : pyramid.weights.stages[l])
      x = bilinear_upsample_2x(stage(x));
    if (l == 0) {
      sum = std::move(x);
    } else {
      if (x.channels() != sum.channels())
        throw DimensionMismatch("fused level channel count mismatch");
      auto acc = sum.data();
      const auto add = x.data();
      for (std::size_t q = 0; q < acc.size(); ++q) acc[q] += add[q];
    }
  }
  return pyramid.weights.output(sum);
}

struct AssembleConfig {
  double score_threshold = 0.1;  // keep category scores strictly above
  double mask_threshold = 0.5;   // soft values >= this are foreground
  std::size_t threads = 1;
};

// One ScoredMask per (cell, class) whose score exceeds the threshold, ordered
// by grid index then class. Each firing cell's kernel is convolved once.
inline std::vector<ScoredMask> assemble_masks(const CategoryGrid& category,
                                              const KernelGrid& kernels,
                                              const FeatureMap& feature,
                                              const AssembleConfig& cfg = {}) {
  if (category.grid_size() != kernels.grid_size())
    throw DimensionMismatch("category and kernel grids differ in S");
  if (kernels.feature_channels() != feature.channels())
    throw DimensionMismatch("kernel grid built for E = " +
                            std::to_string(kernels.feature_channels()) +
                            ", feature has " + std::to_string(feature.channels()));
  const std::size_t cells = kernels.grid_size() * kernels.grid_size();
  std::vector<std::vector<ScoredMask>> per_cell(cells);
  parallel_for(cells, cfg.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t k = b; k < e; ++k) {
      std::vector<std::size_t> classes;
      for (std::size_t c = 0; c < category.num_classes(); ++c)
        if (category.score(k, c) > cfg.score_threshold) classes.push_back(c);
      if (classes.empty()) continue;
      BinaryMask m =
          binarize(to_soft_mask(dynamic_conv(feature, kernels.kernel(k))),
                   cfg.mask_threshold);
      if (mask_area(m) == 0) continue;
      for (auto c : classes)
        per_cell[k].push_back(
            ScoredMask{m, category.score(k, c), static_cast<int>(c)});
    }
  });
  std::vector<ScoredMask> out;
  for (auto& v : per_cell)
    for (auto& m : v) out.push_back(std::move(m));
  return out;
}

struct Instance {
  BinaryMask mask;
  Box box;
  double score = 0.0;
  int category = 0;
  std::size_t index = 0;  // position in the assembled candidate list
};

struct PipelineConfig {
  AssembleConfig assemble{};
  SuppressionConfig suppression{};
};

// fuse -> assemble -> suppress -> box. Output ordered by descending score.
inline std::vector<Instance> inference_pipeline(const CategoryGrid& category,
                                                const KernelGrid& kernels,
                                                const PyramidLevels& pyramid,
                                                const PipelineConfig& cfg = {}) {
  const FeatureMap feature = fuse_pyramid(pyramid);
  const auto candidates = assemble_masks(category, kernels, feature, cfg.assemble);
  const auto kept = suppress(candidates, cfg.suppression);
  std::vector<Instance> out;
  out.reserve(kept.size());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const auto& c = candidates[kept.kept_indices[r]];
    out.push_back(Instance{c.mask, mask_to_box(c.mask), kept.updated_scores[r],
                           c.category, kept.kept_indices[r]});
  }
  return out;
}

}  // namespace segpost
