#pragma once

// Brute-force reference implementations. These are deliberately written as
// direct transcriptions of the definitions, sharing no kernels with the
// optimized paths they are used to check. The verify subcommand, the
// acceptance suite and the unit tests all draw from here.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "segpost/dynahead.hpp"
#include "segpost/maskcore.hpp"
#include "segpost/suppression.hpp"

namespace segpost::oracle {

// IoU by walking every pixel.
inline double pixel_iou(const BinaryMask& a, const BinaryMask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t y = 0; y < a.height(); ++y)
    for (std::size_t x = 0; x < a.width(); ++x) {
      const bool pa = a.at(y, x), pb = b.at(y, x);
      inter += (pa && pb);
      uni += (pa || pb);
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// N^2 loop of scalar mask_iou calls.
template <typename Masks>
std::vector<std::vector<double>> iou_table(const Masks& masks) {
  const std::size_t n = std::size(masks);
  std::vector<std::vector<double>> t(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) t[i][j] = mask_iou(masks[i], masks[j]);
  return t;
}

inline double penalty(const DecayFn& d, double iou) {
  if (d.kind == DecayKind::kLinear) return 1.0 - iou;
  return std::exp(-(iou * iou) / d.sigma);
}

// decay_j = min_{i<j} f(iou_ij) / f(iou_.i), f(iou_.i) = min_{k<i} f(iou_ki)
// (1 when i has no predecessor). A zero denominator makes that ratio +inf.
// An empty or all-infinite min gives 1; results are clamped to <= 1.
inline std::vector<double> matrix_nms_scores(std::span<const double> scores,
                                             const IoUMatrix& ious,
                                             const DecayFn& decay) {
  const std::size_t n = scores.size();
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < j; ++i) {
      double denom = 1.0;
      for (std::size_t k = 0; k < i; ++k)
        denom = std::min(denom, penalty(decay, ious(k, i)));
      if (denom <= 0.0) continue;
      best = std::min(best, penalty(decay, ious(i, j)) / denom);
    }
    const double d = std::isinf(best) ? 1.0 : std::min(1.0, best);
    out[j] = scores[j] * d;
  }
  return out;
}

// Classic suppressed-flag greedy NMS.
inline std::vector<std::size_t> greedy_nms(const IoUMatrix& ious, double threshold) {
  const std::size_t n = ious.size();
  std::vector<bool> removed(n, false);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    kept.push_back(i);
    for (std::size_t j = i + 1; j < n; ++j)
      if (ious(i, j) > threshold) removed[j] = true;
  }
  return kept;
}

inline std::vector<std::size_t> fast_nms(const IoUMatrix& ious, double threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < ious.size(); ++j) {
    bool over = false;
    for (std::size_t i = 0; i < j; ++i) over = over || ious(i, j) > threshold;
    if (!over) kept.push_back(j);
  }
  return kept;
}

// Sequential Soft-NMS over an explicit pair-IoU callback. Returns final
// scores, zero for anything dropped under the threshold.
inline std::vector<double> soft_nms_scores(
    std::span<const double> scores,
    const std::function<double(std::size_t, std::size_t)>& iou,
    const DecayFn& decay, double score_threshold) {
  const std::size_t n = scores.size();
  std::vector<double> s(scores.begin(), scores.end());
  std::vector<bool> done(n, false), dropped(n, false);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    dropped[i] = !(s[i] > 0.0 && s[i] >= score_threshold);
  while (true) {
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!done[i] && !dropped[i] && (pick == n || s[i] > s[pick])) pick = i;
    if (pick == n) break;
    done[pick] = true;
    out[pick] = s[pick];
    for (std::size_t j = 0; j < n; ++j) {
      if (done[j] || dropped[j]) continue;
      s[j] = s[j] * penalty(decay, iou(pick, j));
      if (!(s[j] > 0.0 && s[j] >= score_threshold)) dropped[j] = true;
    }
  }
  return out;
}

// Runs each category on its own (sort, IoU via pixel walk, method) and
// returns final per-input scores, zero where not kept. No thresholding.
inline std::vector<double> per_category_scores(std::span<const ScoredMask> masks,
                                               const SuppressionConfig& cfg) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < masks.size(); ++i)
    groups[cfg.class_agnostic ? 0 : masks[i].category].push_back(i);
  std::vector<double> out(masks.size(), 0.0);
  for (auto& [cat, idx] : groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return masks[a].score > masks[b].score;
    });
    const auto ious = iou_matrix_from_fn(idx.size(), [&](std::size_t a, std::size_t b) {
      return pixel_iou(masks[idx[a]].mask, masks[idx[b]].mask);
    });
    std::vector<double> s(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) s[k] = masks[idx[k]].score;
    std::vector<double> res(idx.size(), 0.0);
    switch (cfg.method) {
      case Method::kMatrix: res = oracle::matrix_nms_scores(s, ious, cfg.decay); break;
      case Method::kSoft:
        res = oracle::soft_nms_scores(
            s, [&](std::size_t a, std::size_t b) { return ious.pair(a, b); },
            cfg.decay, cfg.score_threshold);
        break;
      case Method::kHard:
        for (auto k : oracle::greedy_nms(ious, cfg.iou_threshold)) res[k] = s[k];
        break;
      case Method::kFast:
        for (auto k : oracle::fast_nms(ious, cfg.iou_threshold)) res[k] = s[k];
        break;
    }
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = res[k];
  }
  return out;
}

// 1x1 dynamic conv as an explicit per-pixel dot product.
inline std::vector<double> conv_1x1(const FeatureMap& f, std::span<const double> k) {
  std::vector<double> out;
  for (std::size_t y = 0; y < f.height(); ++y)
    for (std::size_t x = 0; x < f.width(); ++x) {
      double acc = 0.0;
      for (std::size_t c = 0; c < f.channels(); ++c) acc += f.at(y, x, c) * k[c];
      out.push_back(acc);
    }
  return out;
}

// 3x3 dynamic conv over an explicitly zero-padded copy of the input.
inline std::vector<double> conv_3x3(const FeatureMap& f, std::span<const double> k) {
  const std::size_t h = f.height(), w = f.width(), e = f.channels();
  std::vector<double> pad((h + 2) * (w + 2) * e, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < e; ++c)
        pad[((y + 1) * (w + 2) + (x + 1)) * e + c] = f.at(y, x, c);
  std::vector<double> out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t c = 0; c < e; ++c)
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx)
            acc += pad[((y + ky) * (w + 2) + (x + kx)) * e + c] * k[c * 9 + ky * 3 + kx];
      out[y * w + x] = acc;
    }
  return out;
}

// Central finite difference of a scalar function of a vector.
inline std::vector<double> central_difference(
    const std::function<double(std::span<const double>)>& fn,
    std::span<const double> at, double step) {
  std::vector<double> x(at.begin(), at.end()), g(at.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + step;
    const double up = fn(x);
    x[k] = orig - step;
    const double dn = fn(x);
    x[k] = orig;
    g[k] = (up - dn) / (2.0 * step);
  }
  return g;
}

// Relative error with an absolute floor for near-zero references.
inline double rel_error(double got, double want, double floor = 1e-8) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

}  // namespace segpost::oracle
