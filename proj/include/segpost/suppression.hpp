#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segpost/common.hpp"
#include "segpost/maskcore.hpp"

namespace segpost {

struct ScoredMask {
  BinaryMask mask;
  double score = 0.0;
  int category = 0;
};

enum class DecayKind { kLinear, kGaussian };

struct DecayFn {
  DecayKind kind = DecayKind::kGaussian;
  double sigma = 0.5;

  static DecayFn linear() { return {DecayKind::kLinear, 0.5}; }
  static DecayFn gaussian(double sigma = 0.5) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw DomainError("gaussian decay needs sigma > 0");
    return {DecayKind::kGaussian, sigma};
  }

  // Penalty f(iou) applied by one suppressor.
  double penalty(double iou) const {
    return kind == DecayKind::kLinear ? 1.0 - iou
                                      : std::exp(-(iou * iou) / sigma);
  }
};

enum class Method { kHard, kSoft, kFast, kMatrix };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kHard: return "hard";
    case Method::kSoft: return "soft";
    case Method::kFast: return "fast";
    case Method::kMatrix: return "matrix";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "hard") return Method::kHard;
  if (s == "soft") return Method::kSoft;
  if (s == "fast") return Method::kFast;
  if (s == "matrix") return Method::kMatrix;
  throw MalformedInput("unknown suppression method '" + std::string(s) + "'");
}

struct SuppressionConfig {
  Method method = Method::kMatrix;
  DecayFn decay{};
  double iou_threshold = 0.5;
  double score_threshold = 0.05;
  std::size_t top_k = 100;
  bool class_agnostic = false;
  std::size_t threads = 1;

  void validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(iou_threshold)) throw DomainError("iou_threshold outside [0,1]");
    if (!in_unit(score_threshold))
      throw DomainError("score_threshold outside [0,1]");
    if (top_k < 1) throw DomainError("top_k must be >= 1");
    if (decay.kind == DecayKind::kGaussian && !(decay.sigma > 0.0))
      throw DomainError("gaussian decay needs sigma > 0");
  }
};

// Post-suppression selection applied by the score-rescoring methods.
struct Selection {
  double score_threshold = 0.0;
  std::size_t top_k = std::numeric_limits<std::size_t>::max();
};

struct SuppressionResult {
  std::vector<std::size_t> kept_indices;
  std::vector<double> updated_scores;

  std::size_t size() const { return kept_indices.size(); }
};

// Descending by score, ties by ascending index.
template <typename Items>
std::vector<std::size_t> sort_by_score(const Items& items) {
  auto score = [&](std::size_t i) -> double {
    if constexpr (requires { items[i].score; })
      return items[i].score;
    else
      return items[i];
  };
  std::vector<std::size_t> perm(std::size(items));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return score(a) > score(b);
  });
  return perm;
}

// (1 - iou) / (1 - cmax).
inline double decay_linear(double iou, double cmax) {
  if (cmax >= 1.0)
    throw SingularityError("linear decay is singular at cmax = 1");
  return (1.0 - iou) / (1.0 - cmax);
}

// exp(-(iou^2 - cmax^2) / sigma).
inline double decay_gauss(double iou, double cmax, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian decay needs sigma > 0");
  return std::exp(-(iou * iou - cmax * cmax) / sigma);
}

namespace detail {

inline void require_matching(std::size_t n, const IoUMatrix& ious) {
  if (ious.size() != n)
    throw DimensionMismatch("iou matrix is " + std::to_string(ious.size()) +
                            "x" + std::to_string(ious.size()) + " but " +
                            std::to_string(n) + " masks were given");
}

template <typename Items>
std::vector<double> scores_of(const Items& items) {
  std::vector<double> s(std::size(items));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = items[i].score;
  return s;
}

// Keeps indices with score > 0 and >= threshold, best top_k first.
inline SuppressionResult select(std::span<const double> scores,
                                const Selection& sel) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > 0.0 && scores[i] >= sel.score_threshold) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  if (idx.size() > sel.top_k) idx.resize(sel.top_k);
  SuppressionResult r;
  r.kept_indices = idx;
  r.updated_scores.reserve(idx.size());
  for (auto i : idx) r.updated_scores.push_back(scores[i]);
  return r;
}

}  // namespace detail

// Column-wise max of the strictly-upper IoU matrix: for each prediction the
// largest overlap with any higher-scored one (0 for the first).
inline std::vector<double> column_max(const IoUMatrix& ious,
                                      std::size_t threads = 1) {
  const std::size_t n = ious.size();
  std::vector<double> cmax(n, 0.0);
  parallel_for(n, threads, [&](std::size_t jb, std::size_t je) {
    for (std::size_t i = 0; i + 1 < je; ++i) {
      const double* row = ious.row(i).data();
      for (std::size_t j = std::max(jb, i + 1); j < je; ++j)
        cmax[j] = std::max(cmax[j], row[j]);
    }
  });
  return cmax;
}

// Matrix NMS decay factors for scores already sorted descending.
//
// decay_j = min_i f(iou_ij) / f(cmax_i) taken over every row i of the matrix,
// which is the column-min of the full N x N ratio matrix. Rows i >= j hold
// iou = 0 and contribute 1 / f(cmax_i) >= 1. The Gaussian ratio is monotone
// in iou_ij^2 - cmax_i^2, so the column-min becomes a column-max of that
// exponent followed by a single exp per column. A linear suppressor with
// cmax = 1 contributes +inf; a column with no finite term decays by 1.
// Final factors are clamped to <= 1.
//
// cmax_i only depends on rows above i, so a single row-order sweep can
// finish cmax_i just before row i is used as a suppressor. With several
// threads the columns are split into blocks and cmax is computed first.
// Every reduction is a max or min, so the bits never depend on threads.
inline std::vector<double> matrix_nms_decay(const IoUMatrix& ious,
                                            const DecayFn& decay,
                                            std::size_t threads = 1) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t n = ious.size();
  std::vector<double> out(n, 1.0);
  if (n == 0) return out;
  const bool gauss = decay.kind == DecayKind::kGaussian;

  // Row i's multiplier: cmax_i^2 (Gaussian) or 1 / (1 - cmax_i) (linear).
  auto row_term = [&](double cmax) {
    if (gauss) return cmax * cmax;
    return cmax >= 1.0 ? kInf : 1.0 / (1.0 - cmax);
  };
  // acc[j] is a running max of iou^2 - cmax_i^2 (Gaussian) or a running
  // min of (1 - iou) / (1 - cmax_i) (linear) over rows i < j.
  std::vector<double> cmax(n, 0.0), term(n), acc(n, gauss ? -kInf : kInf);

  auto sweep_row = [&](std::size_t i, std::size_t jb, std::size_t je) {
    const double* __restrict row = ious.row(i).data();
    double* __restrict a = acc.data();
    const double t = term[i];
    if (gauss) {
      for (std::size_t j = jb; j < je; ++j) {
        const double v = row[j] * row[j] - t;
        a[j] = v > a[j] ? v : a[j];
      }
    } else if (t != kInf) {
      for (std::size_t j = jb; j < je; ++j) {
        const double v = (1.0 - row[j]) * t;
        a[j] = v < a[j] ? v : a[j];
      }
    }
  };

  if (threads <= 1) {
    double* __restrict c = cmax.data();
    double* __restrict a = acc.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double t = term[i] = row_term(c[i]);
      const double* __restrict row = ious.row(i).data();
      if (gauss) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const double r = row[j];
          c[j] = r > c[j] ? r : c[j];
          const double v = r * r - t;
          a[j] = v > a[j] ? v : a[j];
        }
      } else if (t != kInf) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const double r = row[j];
          c[j] = r > c[j] ? r : c[j];
          const double v = (1.0 - r) * t;
          a[j] = v < a[j] ? v : a[j];
        }
      } else {
        for (std::size_t j = i + 1; j < n; ++j) c[j] = row[j] > c[j] ? row[j] : c[j];
      }
    }
  } else {
    cmax = column_max(ious, threads);
    for (std::size_t i = 0; i < n; ++i) term[i] = row_term(cmax[i]);
    parallel_for(n, threads, [&](std::size_t jb, std::size_t je) {
      for (std::size_t i = 0; i + 1 < je; ++i) sweep_row(i, std::max(jb, i + 1), je);
    });
  }

  // Rows i >= j (iou = 0) contribute -cmax_i^2 or 1 / (1 - cmax_i): fold in
  // their suffix extreme, then map each column to its factor.
  double lower = gauss ? -kInf : kInf;
  for (std::size_t j = n; j-- > 0;) {
    if (gauss) {
      lower = std::max(lower, 0.0 - term[j]);
      const double e = std::max(acc[j], lower);
      out[j] = std::min(1.0, std::exp(-e / decay.sigma));
    } else {
      lower = std::min(lower, term[j]);
      const double r = std::min(acc[j], lower);
      out[j] = r == kInf ? 1.0 : std::min(1.0, r);
    }
  }
  return out;
}

// Scores sorted descending; returns decayed scores (index-aligned).
inline std::vector<double> matrix_nms_scores(std::span<const double> scores,
                                             const IoUMatrix& ious,
                                             const DecayFn& decay,
                                             std::size_t threads = 1) {
  detail::require_matching(scores.size(), ious);
  auto out = matrix_nms_decay(ious, decay, threads);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] *= scores[j];
  return out;
}

template <typename Masks>
SuppressionResult matrix_nms(const Masks& masks, const IoUMatrix& ious,
                             const DecayFn& decay, const Selection& sel = {},
                             std::size_t threads = 1) {
  const auto scores = detail::scores_of(masks);
  return detail::select(matrix_nms_scores(scores, ious, decay, threads), sel);
}

// Greedy NMS over scores sorted descending: a prediction survives iff its IoU
// with every previously kept prediction is <= threshold. Sequential.
inline std::vector<std::size_t> hard_nms_keep(const IoUMatrix& ious,
                                              double threshold) {
  const std::size_t n = ious.size();
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < n; ++j) {
    bool keep = true;
    for (const std::size_t k : kept)
      if (ious(k, j) > threshold) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(j);
  }
  return kept;
}

template <typename Masks>
SuppressionResult hard_nms(const Masks& masks, const IoUMatrix& ious,
                           double threshold) {
  detail::require_matching(std::size(masks), ious);
  SuppressionResult r;
  r.kept_indices = hard_nms_keep(ious, threshold);
  for (auto i : r.kept_indices) r.updated_scores.push_back(masks[i].score);
  return r;
}

// One-shot: keep j iff the column max of the strictly-upper matrix is
// <= threshold. Suppressed predictions still suppress others.
inline std::vector<std::size_t> fast_nms_keep(const IoUMatrix& ious,
                                              double threshold,
                                              std::size_t threads = 1) {
  const auto cmax = column_max(ious, threads);
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < cmax.size(); ++j)
    if (cmax[j] <= threshold) kept.push_back(j);
  return kept;
}

template <typename Masks>
SuppressionResult fast_nms(const Masks& masks, const IoUMatrix& ious,
                           double threshold, std::size_t threads = 1) {
  detail::require_matching(std::size(masks), ious);
  SuppressionResult r;
  r.kept_indices = fast_nms_keep(ious, threshold, threads);
  for (auto i : r.kept_indices) r.updated_scores.push_back(masks[i].score);
  return r;
}

// Sequential Soft-NMS. `iou(a, b)` returns the overlap of predictions a and b.
// Each round selects the highest current score among the live predictions
// (ties to the lower index), keeps it, and multiplies every other live score
// by f(iou). Predictions whose score falls below the threshold leave the live
// set and no longer suppress. Kept indices are in selection order.
template <typename IouFn>
SuppressionResult soft_nms_with(std::span<const double> scores, IouFn&& iou,
                                const DecayFn& decay, double score_threshold) {
  const std::size_t n = scores.size();
  std::vector<double> cur(scores.begin(), scores.end());
  std::vector<std::size_t> live;
  live.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (cur[i] > 0.0 && cur[i] >= score_threshold) live.push_back(i);
  SuppressionResult r;
  while (!live.empty()) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < live.size(); ++k)
      if (cur[live[k]] > cur[live[best]]) best = k;
    const std::size_t sel = live[best];
    live.erase(live.begin() + static_cast<std::ptrdiff_t>(best));
    r.kept_indices.push_back(sel);
    r.updated_scores.push_back(cur[sel]);
    std::size_t w = 0;
    for (std::size_t k = 0; k < live.size(); ++k) {
      const std::size_t j = live[k];
      cur[j] *= decay.penalty(iou(sel, j));
      if (cur[j] > 0.0 && cur[j] >= score_threshold) live[w++] = j;
    }
    live.resize(w);
  }
  return r;
}

// Reference form: IoUs are computed on demand from the masks.
template <typename Masks>
SuppressionResult soft_nms(const Masks& masks, const DecayFn& decay,
                           double score_threshold) {
  const auto scores = detail::scores_of(masks);
  return soft_nms_with(
      scores,
      [&](std::size_t a, std::size_t b) {
        return mask_iou(masks[a].mask, masks[b].mask);
      },
      decay, score_threshold);
}

// Same algorithm reading a precomputed matrix, for like-for-like timing.
template <typename Masks>
SuppressionResult soft_nms(const Masks& masks, const IoUMatrix& ious,
                           const DecayFn& decay, double score_threshold) {
  detail::require_matching(std::size(masks), ious);
  const auto scores = detail::scores_of(masks);
  return soft_nms_with(
      scores, [&](std::size_t a, std::size_t b) { return ious.pair(a, b); },
      decay, score_threshold);
}

// Multi-class dispatch. Groups by category (unless class_agnostic), sorts
// each group, builds its IoU matrix once, runs the configured method, then
// applies score_threshold and top_k across all groups. Indices refer to the
// input list; output is ordered by descending updated score.
template <typename Masks>
SuppressionResult suppress(const Masks& masks, const SuppressionConfig& cfg) {
  cfg.validate();
  const std::size_t n = std::size(masks);
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i)
    groups[cfg.class_agnostic ? 0 : masks[i].category].push_back(i);

  std::vector<double> final_scores(n, 0.0);
  for (const auto& [cat, members] : groups) {
    std::vector<double> raw(members.size());
    for (std::size_t k = 0; k < members.size(); ++k)
      raw[k] = masks[members[k]].score;
    const auto order = sort_by_score(raw);
    std::vector<std::size_t> sorted(members.size());
    std::vector<double> scores(members.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      sorted[k] = members[order[k]];
      scores[k] = masks[sorted[k]].score;
    }
    struct Ref {
      const BinaryMask& mask;
    };
    std::vector<Ref> refs;
    refs.reserve(sorted.size());
    for (auto i : sorted) refs.push_back(Ref{masks[i].mask});
    const IoUMatrix ious = pairwise_iou_matrix(refs, cfg.threads);

    switch (cfg.method) {
      case Method::kMatrix: {
        const auto s = matrix_nms_scores(scores, ious, cfg.decay, cfg.threads);
        for (std::size_t k = 0; k < s.size(); ++k) final_scores[sorted[k]] = s[k];
        break;
      }
      case Method::kSoft: {
        const auto r = soft_nms_with(
            scores, [&](std::size_t a, std::size_t b) { return ious.pair(a, b); },
            cfg.decay, cfg.score_threshold);
        for (std::size_t k = 0; k < r.size(); ++k)
          final_scores[sorted[r.kept_indices[k]]] = r.updated_scores[k];
        break;
      }
      case Method::kHard:
        for (auto k : hard_nms_keep(ious, cfg.iou_threshold))
          final_scores[sorted[k]] = scores[k];
        break;
      case Method::kFast:
        for (auto k : fast_nms_keep(ious, cfg.iou_threshold, cfg.threads))
          final_scores[sorted[k]] = scores[k];
        break;
    }
  }
  return detail::select(final_scores, Selection{cfg.score_threshold, cfg.top_k});
}

}  // namespace segpost
