#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "segpost/common.hpp"
#include "segpost/dynahead.hpp"
#include "segpost/maskcore.hpp"
#include "segpost/oracles.hpp"
#include "segpost/suppression.hpp"

namespace segpost {

enum class ShapeKind { kRectangle, kEllipse };

struct SceneSpec {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t num_instances = 5;
  std::size_t num_duplicates = 4;  // extra jittered copies per instance
  ShapeKind shape = ShapeKind::kEllipse;
  double score_noise = 0.05;
  std::uint64_t seed = 0;
  std::size_t num_categories = 1;

  void validate() const {
    if (height == 0 || width == 0) throw DomainError("scene dimensions must be >= 1");
    if (num_categories == 0) throw DomainError("scene needs >= 1 category");
    if (!(score_noise >= 0.0)) throw DomainError("score noise must be >= 0");
  }
};

namespace detail {

inline BinaryMask paint(ShapeKind kind, std::size_t h, std::size_t w, double cy,
                        double cx, double ry, double rx) {
  BinaryMask m(h, w);
  const auto lo = [](double v) { return static_cast<long>(std::floor(v)); };
  const auto hi = [](double v) { return static_cast<long>(std::ceil(v)); };
  const long y0 = std::max(0L, lo(cy - ry)), y1 = std::min(static_cast<long>(h) - 1, hi(cy + ry));
  const long x0 = std::max(0L, lo(cx - rx)), x1 = std::min(static_cast<long>(w) - 1, hi(cx + rx));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry;
      const double dx = (static_cast<double>(x) - cx) / rx;
      const bool in = kind == ShapeKind::kRectangle ? (std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0)
                                                    : (dy * dy + dx * dx <= 1.0);
      if (in) m.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    }
  // The centre pixel is always painted so no instance is empty.
  const auto py = static_cast<std::size_t>(std::clamp(lo(cy + 0.5), 0L, static_cast<long>(h) - 1));
  const auto px = static_cast<std::size_t>(std::clamp(lo(cx + 0.5), 0L, static_cast<long>(w) - 1));
  m.set(py, px);
  return m;
}

}  // namespace detail

// Duplicate clusters: each instance is painted once at its base pose and
// then num_duplicates more times with jittered pose and a lower, noisy score.
// Shapes are clipped to the image. Deterministic for a given seed.
inline std::vector<ScoredMask> gen_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  std::vector<ScoredMask> out;
  out.reserve(spec.num_instances * (1 + spec.num_duplicates));
  for (std::size_t n = 0; n < spec.num_instances; ++n) {
    const double cy = unit(rng) * (h - 1), cx = unit(rng) * (w - 1);
    const double ry = std::max(1.0, (0.05 + 0.15 * unit(rng)) * h);
    const double rx = std::max(1.0, (0.05 + 0.15 * unit(rng)) * w);
    const double base = 0.6 + 0.4 * unit(rng);
    const int cat = static_cast<int>(n % spec.num_categories);
    for (std::size_t d = 0; d <= spec.num_duplicates; ++d) {
      double y = cy, x = cx, sy = ry, sx = rx, s = base;
      if (d > 0) {
        y += 0.15 * ry * gauss(rng);
        x += 0.15 * rx * gauss(rng);
        sy *= 1.0 + 0.1 * gauss(rng);
        sx *= 1.0 + 0.1 * gauss(rng);
        s = base * (0.5 + 0.45 * unit(rng)) + spec.score_noise * gauss(rng);
      }
      y = std::clamp(y, 0.0, h - 1);
      x = std::clamp(x, 0.0, w - 1);
      sy = std::max(sy, 1.0);
      sx = std::max(sx, 1.0);
      s = std::clamp(s, 0.01, 1.0);
      out.push_back(ScoredMask{
          detail::paint(spec.shape, spec.height, spec.width, y, x, sy, sx), s, cat});
    }
  }
  return out;
}

struct BenchReport {
  std::string method;
  std::size_t n = 0;
  double iou_matrix_ms = 0.0;   // median
  double suppression_ms = 0.0;  // median, matrix excluded
  std::size_t kept = 0;
  std::uint64_t checksum = 0;
  std::vector<double> suppression_samples_ms;
};

struct BenchOptions {
  std::vector<Method> methods{Method::kHard, Method::kSoft, Method::kFast, Method::kMatrix};
  std::size_t repeats = 20;
  std::size_t threads = 1;
  DecayFn decay{};
  double iou_threshold = 0.5;
  double score_threshold = 0.05;
  bool verify = true;  // oracle cross-check before timing
};

class VerificationFailure : public Error {
 public:
  using Error::Error;
};

// FNV-1a over (index, score bits) pairs of the kept set.
inline std::uint64_t kept_checksum(const SuppressionResult& r) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (std::size_t k = 0; k < r.size(); ++k) {
    mix(r.kept_indices[k]);
    std::uint64_t bits;
    std::memcpy(&bits, &r.updated_scores[k], sizeof bits);
    mix(bits);
  }
  return h;
}

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// The suppression step alone on a sorted list with a precomputed matrix.
// Kept indices refer to the sorted order.
inline SuppressionResult run_core(Method m, std::span<const double> scores,
                                  const IoUMatrix& ious, const BenchOptions& o) {
  SuppressionResult r;
  switch (m) {
    case Method::kMatrix: {
      const auto s = matrix_nms_scores(scores, ious, o.decay, o.threads);
      for (std::size_t j = 0; j < s.size(); ++j)
        if (s[j] > 0.0 && s[j] >= o.score_threshold) {
          r.kept_indices.push_back(j);
          r.updated_scores.push_back(s[j]);
        }
      break;
    }
    case Method::kSoft:
      r = soft_nms_with(
          scores, [&](std::size_t a, std::size_t b) { return ious.pair(a, b); },
          o.decay, o.score_threshold);
      break;
    case Method::kHard:
      r.kept_indices = hard_nms_keep(ious, o.iou_threshold);
      break;
    case Method::kFast:
      r.kept_indices = fast_nms_keep(ious, o.iou_threshold, o.threads);
      break;
  }
  if (r.updated_scores.empty())
    for (auto k : r.kept_indices) r.updated_scores.push_back(scores[k]);
  return r;
}

inline void cross_check(Method m, std::span<const double> scores,
                        const IoUMatrix& ious, const SuppressionResult& got,
                        const BenchOptions& o) {
  std::vector<double> want(scores.size(), 0.0);
  switch (m) {
    case Method::kMatrix: want = oracle::matrix_nms_scores(scores, ious, o.decay); break;
    case Method::kSoft:
      want = oracle::soft_nms_scores(
          scores, [&](std::size_t a, std::size_t b) { return ious.pair(a, b); },
          o.decay, o.score_threshold);
      break;
    case Method::kHard:
      for (auto k : oracle::greedy_nms(ious, o.iou_threshold)) want[k] = scores[k];
      break;
    case Method::kFast:
      for (auto k : oracle::fast_nms(ious, o.iou_threshold)) want[k] = scores[k];
      break;
  }
  std::vector<double> have(scores.size(), 0.0);
  for (std::size_t k = 0; k < got.size(); ++k) have[got.kept_indices[k]] = got.updated_scores[k];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (m == Method::kMatrix && !(want[j] > 0.0 && want[j] >= o.score_threshold)) want[j] = 0.0;
    if (std::abs(have[j] - want[j]) > 1e-9)
      throw VerificationFailure(std::string(method_name(m)) +
                                ": disagrees with reference at sorted index " +
                                std::to_string(j));
  }
}

}  // namespace detail

// Class-agnostic timing of each method on one scene. Per method: optional
// oracle cross-check, one warm-up, then `repeats` timed runs; the IoU matrix
// and the suppression step are timed separately and reported as medians.
inline std::vector<BenchReport> run_bench(std::span<const ScoredMask> scene,
                                          const BenchOptions& opt) {
  if (opt.repeats < 3) throw DomainError("bench needs repeats >= 3");
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::duration d) {
    return std::chrono::duration<double, std::milli>(d).count();
  };

  const auto order = sort_by_score(scene);
  std::vector<ScoredMask> sorted;
  sorted.reserve(order.size());
  for (auto i : order) sorted.push_back(scene[i]);
  std::vector<double> scores(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) scores[k] = sorted[k].score;

  IoUMatrix ious = pairwise_iou_matrix(sorted, opt.threads);
  std::vector<double> matrix_samples;
  for (std::size_t r = 0; r < opt.repeats; ++r) {
    const auto t0 = clock::now();
    IoUMatrix m = pairwise_iou_matrix(sorted, opt.threads);
    matrix_samples.push_back(ms(clock::now() - t0));
    if (!(m == ious)) throw VerificationFailure("iou matrix is not deterministic");
  }
  const double matrix_ms = detail::median(matrix_samples);

  std::vector<BenchReport> out;
  for (const Method m : opt.methods) {
    BenchReport rep;
    rep.method = std::string(method_name(m));
    rep.n = sorted.size();
    rep.iou_matrix_ms = matrix_ms;
    SuppressionResult first = detail::run_core(m, scores, ious, opt);
    if (opt.verify) detail::cross_check(m, scores, ious, first, opt);
    rep.kept = first.size();
    rep.checksum = kept_checksum(first);
    for (std::size_t r = 0; r < opt.repeats; ++r) {
      const auto t0 = clock::now();
      SuppressionResult res = detail::run_core(m, scores, ious, opt);
      rep.suppression_samples_ms.push_back(ms(clock::now() - t0));
      if (kept_checksum(res) != rep.checksum)
        throw VerificationFailure(rep.method + ": kept-score checksum changed between repeats");
    }
    rep.suppression_ms = detail::median(rep.suppression_samples_ms);
    out.push_back(std::move(rep));
  }
  return out;
}

// ---- synthetic head outputs -------------------------------------------------

struct HeadSpec {
  std::size_t height = 32;  // level-0 (finest) feature size
  std::size_t width = 32;
  std::size_t num_levels = 4;
  std::size_t channels = 8;      // pyramid channels
  std::size_t out_channels = 8;  // E, mask-feature channels
  std::size_t grid_size = 12;    // S
  std::size_t num_classes = 3;
  std::size_t num_objects = 6;
  bool kernel_3x3 = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_levels == 0 || channels == 0 || out_channels == 0 || grid_size == 0 ||
        num_classes == 0)
      throw DomainError("head spec counts must be >= 1");
    if (height % (std::size_t{1} << (num_levels - 1)) != 0 ||
        width % (std::size_t{1} << (num_levels - 1)) != 0 || height == 0 || width == 0)
      throw DomainError("head spec size must be a positive multiple of 2^(levels-1)");
  }
};

struct HeadScene {
  CategoryGrid category;
  KernelGrid kernels;
  PyramidLevels pyramid;
};

// Random pyramid and fusion weights. Each object owns a random kernel and a
// class; a 2x2 block of cells around its centre predicts that kernel with
// small noise and descending scores, so the assembled candidates form
// duplicate clusters. All other cells score below the 0.1 firing threshold.
inline HeadScene gen_head_scene(const HeadSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  HeadScene out;
  for (std::size_t l = 0; l < spec.num_levels; ++l) {
    const std::size_t h = spec.height >> l, w = spec.width >> l;
    std::vector<double> v(h * w * spec.channels);
    for (double& x : v) x = nd(rng);
    out.pyramid.levels.emplace_back(h, w, spec.channels, std::move(v));
  }
  out.pyramid.weights =
      FusionWeights::seeded(spec.num_levels, spec.channels, spec.out_channels, rng());

  const std::size_t s = spec.grid_size, e = spec.out_channels;
  const std::size_t d = spec.kernel_3x3 ? 9 * e : e;
  std::vector<double> kernels(s * s * d), scores(s * s * spec.num_classes);
  for (double& x : kernels) x = 0.5 * nd(rng);
  for (double& x : scores) x = 0.1 * unit(rng);
  for (std::size_t o = 0; o < spec.num_objects; ++o) {
    std::vector<double> k(d);
    for (double& x : k) x = nd(rng);
    const auto cls = static_cast<std::size_t>(unit(rng) * static_cast<double>(spec.num_classes)) %
                     spec.num_classes;
    const double base = 0.5 + 0.5 * unit(rng);
    const std::size_t ci = static_cast<std::size_t>(unit(rng) * static_cast<double>(s)) % s;
    const std::size_t cj = static_cast<std::size_t>(unit(rng) * static_cast<double>(s)) % s;
    std::size_t rank = 0;
    for (std::size_t di = 0; di < 2; ++di)
      for (std::size_t dj = 0; dj < 2; ++dj) {
        const std::size_t i = std::min(s - 1, ci + di), j = std::min(s - 1, cj + dj);
        const std::size_t cell = grid_index(i, j, s);
        for (std::size_t q = 0; q < d; ++q) kernels[cell * d + q] = k[q] + 0.05 * nd(rng);
        scores[cell * spec.num_classes + cls] =
            std::clamp(base * (1.0 - 0.1 * static_cast<double>(rank++)), 0.0, 1.0);
      }
  }
  out.kernels = KernelGrid(s, d, e, std::move(kernels));
  out.category = CategoryGrid(s, spec.num_classes, std::move(scores));
  return out;
}

}  // namespace segpost
