#pragma once

// Randomized cross-checks of the optimized library against the brute-force
// oracles. Each suite is deterministic for a given seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "segpost/bench.hpp"
#include "segpost/dynahead.hpp"
#include "segpost/losses.hpp"
#include "segpost/maskcore.hpp"
#include "segpost/oracles.hpp"
#include "segpost/suppression.hpp"

namespace segpost::verify {

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::size_t checked = 0;  // number of random instances examined
  double worst = 0.0;       // largest observed error, where meaningful
  std::string detail;       // first failure, if any
};

// A random sorted scene of exactly n masks drawn from duplicate clusters.
inline std::vector<ScoredMask> random_scene(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dups(0, 6), side(8, 40);
  SceneSpec spec;
  spec.height = side(rng);
  spec.width = side(rng);
  spec.num_duplicates = dups(rng);
  spec.num_instances = (n + spec.num_duplicates) / (spec.num_duplicates + 1);
  spec.shape = rng() % 2 ? ShapeKind::kEllipse : ShapeKind::kRectangle;
  spec.seed = rng();
  auto scene = gen_scene(spec);
  scene.resize(n);
  const auto order = sort_by_score(scene);
  std::vector<ScoredMask> sorted;
  sorted.reserve(n);
  for (auto i : order) sorted.push_back(scene[i]);
  return sorted;
}

namespace detail {

inline SuiteResult named(std::string name) {
  SuiteResult r;
  r.name = std::move(name);
  return r;
}

inline std::vector<double> dense_scores(std::size_t n, const SuppressionResult& r) {
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < r.size(); ++k) out[r.kept_indices[k]] = r.updated_scores[k];
  return out;
}

inline void fail(SuiteResult& r, const std::string& what) {
  if (r.passed) r.detail = what;
  r.passed = false;
}

}  // namespace detail

// Matrix NMS updated scores vs direct evaluation, both decays, abs tol.
inline SuiteResult matrix_vs_oracle(std::size_t trials, std::size_t max_n,
                                    std::uint64_t seed, double tol = 1e-6) {
  auto r = detail::named("matrix_nms vs direct evaluation");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nd(1, max_n);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto scene = random_scene(rng, nd(rng));
    const auto ious = pairwise_iou_matrix(scene);
    const auto scores = segpost::detail::scores_of(scene);
    for (const DecayFn decay : {DecayFn::linear(), DecayFn::gaussian(0.5)}) {
      const auto got = matrix_nms_scores(scores, ious, decay);
      const auto want = oracle::matrix_nms_scores(scores, ious, decay);
      for (std::size_t j = 0; j < got.size(); ++j) {
        const double err = std::abs(got[j] - want[j]);
        r.worst = std::max(r.worst, err);
        if (!(err <= tol))
          detail::fail(r, "trial " + std::to_string(t) + " index " + std::to_string(j));
      }
    }
    ++r.checked;
  }
  return r;
}

// Matrix NMS and Soft-NMS coincide exactly when N <= 2.
inline SuiteResult small_n_agreement(std::size_t trials, std::uint64_t seed) {
  auto r = detail::named("matrix_nms == soft_nms for N <= 2");
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto scene = random_scene(rng, 1 + t % 2);
    const auto ious = pairwise_iou_matrix(scene);
    const DecayFn decay = t % 4 < 2 ? DecayFn::linear() : DecayFn::gaussian(0.1 + rng() % 10 * 0.1);
    const auto m = detail::dense_scores(scene.size(), matrix_nms(scene, ious, decay));
    const auto s = detail::dense_scores(scene.size(), soft_nms(scene, ious, decay, 0.0));
    if (m != s) detail::fail(r, "trial " + std::to_string(t));
    ++r.checked;
  }
  return r;
}

// Hard NMS kept sets vs the suppressed-flag greedy oracle.
inline SuiteResult hard_vs_greedy(std::size_t trials, std::size_t max_n, std::uint64_t seed) {
  auto r = detail::named("hard_nms vs greedy oracle");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nd(1, max_n);
  std::uniform_real_distribution<double> thr(0.1, 0.9);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto scene = random_scene(rng, nd(rng));
    const auto ious = pairwise_iou_matrix(scene);
    const double th = thr(rng);
    if (hard_nms_keep(ious, th) != oracle::greedy_nms(ious, th))
      detail::fail(r, "trial " + std::to_string(t));
    ++r.checked;
  }
  return r;
}

// Fast NMS keeps a subset of Hard NMS, and matches its own oracle.
inline SuiteResult fast_subset_of_hard(std::size_t trials, std::size_t max_n,
                                       std::uint64_t seed) {
  auto r = detail::named("fast_nms subset of hard_nms");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nd(1, max_n);
  std::uniform_real_distribution<double> thr(0.1, 0.9);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto scene = random_scene(rng, nd(rng));
    const auto ious = pairwise_iou_matrix(scene);
    const double th = thr(rng);
    const auto fast = fast_nms_keep(ious, th);
    const auto hard = hard_nms_keep(ious, th);
    if (!std::includes(hard.begin(), hard.end(), fast.begin(), fast.end()))
      detail::fail(r, "trial " + std::to_string(t) + ": not a subset");
    if (fast != oracle::fast_nms(ious, th))
      detail::fail(r, "trial " + std::to_string(t) + ": differs from oracle");
    ++r.checked;
  }
  return r;
}

// Soft-NMS final scores vs the flag-based sequential oracle.
inline SuiteResult soft_vs_oracle(std::size_t trials, std::size_t max_n, std::uint64_t seed) {
  auto r = detail::named("soft_nms vs sequential oracle");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nd(1, max_n);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto scene = random_scene(rng, nd(rng));
    const DecayFn decay = t % 2 ? DecayFn::linear() : DecayFn::gaussian(0.5);
    const double thr = 0.05;
    const auto got = detail::dense_scores(scene.size(), soft_nms(scene, decay, thr));
    const auto scores = segpost::detail::scores_of(scene);
    const auto want = oracle::soft_nms_scores(
        scores,
        [&](std::size_t a, std::size_t b) { return oracle::pixel_iou(scene[a].mask, scene[b].mask); },
        decay, thr);
    if (got != want) detail::fail(r, "trial " + std::to_string(t));
    ++r.checked;
  }
  return r;
}

// Dynamic 1x1 and 3x3 convolution vs loop oracles: relative tolerance on
// real inputs, bit-exact on small integer inputs.
inline SuiteResult conv_vs_oracle(std::size_t trials, std::uint64_t seed, double tol = 1e-6) {
  auto r = detail::named("dynamic conv vs loop oracles");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> hw(1, 24), ed(1, 16);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> ig(-8, 8);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = hw(rng), w = hw(rng), e = ed(rng);
    for (const bool integers : {false, true}) {
      auto draw = [&] { return integers ? static_cast<double>(ig(rng)) : g(rng); };
      std::vector<double> fv(h * w * e), k1(e), k3(9 * e);
      for (double& v : fv) v = draw();
      for (double& v : k1) v = draw();
      for (double& v : k3) v = draw();
      const FeatureMap f(h, w, e, fv);
      const auto a1 = dynamic_conv_1x1(f, k1).values;
      const auto a3 = dynamic_conv_3x3(f, k3).values;
      const auto o1 = oracle::conv_1x1(f, k1), o3 = oracle::conv_3x3(f, k3);
      for (std::size_t p = 0; p < a1.size(); ++p) {
        if (integers) {
          if (a1[p] != o1[p] || a3[p] != o3[p])
            detail::fail(r, "integer trial " + std::to_string(t) + " not bit-exact");
        } else {
          const double e1 = oracle::rel_error(a1[p], o1[p]), e3 = oracle::rel_error(a3[p], o3[p]);
          r.worst = std::max({r.worst, e1, e3});
          if (!(e1 <= tol && e3 <= tol))
            detail::fail(r, "trial " + std::to_string(t) + " pixel " + std::to_string(p));
        }
      }
    }
    ++r.checked;
  }
  return r;
}

// Analytic dice and focal gradients vs central differences.
inline SuiteResult gradients_vs_fd(std::size_t trials, std::uint64_t seed,
                                   double step = 1e-4, double tol = 1e-4) {
  auto r = detail::named("loss gradients vs central differences");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> prob(0.05, 0.95), gam(0.0, 4.0), alp(0.05, 0.95);
  std::uniform_int_distribution<std::size_t> len(1, 64);
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> p(len(rng)), q(p.size());
    for (double& v : p) v = prob(rng);
    for (double& v : q) v = prob(rng) < 0.5 ? 1.0 : 0.0;
    const auto grad = dice_loss(p, q, 1e-6).grad;
    const auto fd = oracle::central_difference(
        [&](std::span<const double> x) { return dice_loss(x, q, 1e-6).value; }, p, step);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double err = oracle::rel_error(grad[k], fd[k]);
      r.worst = std::max(r.worst, err);
      if (!(err <= tol)) detail::fail(r, "dice trial " + std::to_string(t));
    }

    const double x = prob(rng), gamma = gam(rng), alpha = alp(rng);
    const int y = static_cast<int>(rng() % 2);
    const std::vector<double> at{x};
    const double g = focal_loss(x, y, alpha, gamma).grad[0];
    const double f = oracle::central_difference(
        [&](std::span<const double> v) { return focal_loss(v[0], y, alpha, gamma).value; },
        at, step)[0];
    const double err = oracle::rel_error(g, f);
    r.worst = std::max(r.worst, err);
    if (!(err <= tol)) detail::fail(r, "focal trial " + std::to_string(t));
    ++r.checked;
  }
  return r;
}

// encode -> decode -> encode reproduces the counts exactly.
inline SuiteResult rle_round_trip(std::size_t trials, std::uint64_t seed) {
  auto r = detail::named("rle round trip");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  std::uniform_real_distribution<double> dens(0.0, 1.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = dim(rng), w = dim(rng);
    std::bernoulli_distribution on(dens(rng));
    BinaryMask m(h, w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (on(rng)) m.set(y, x);
    const auto first = rle_encode(m);
    const auto back = rle_decode(first);
    if (!(back == m) || !(rle_encode(back) == first))
      detail::fail(r, "trial " + std::to_string(t));
    ++r.checked;
  }
  return r;
}

// The suites run by the `verify` subcommand.
inline std::vector<SuiteResult> run_all(std::size_t trials, std::uint64_t seed) {
  return {
      matrix_vs_oracle(trials, 120, seed + 1),
      small_n_agreement(trials, seed + 2),
      hard_vs_greedy(trials, 200, seed + 3),
      fast_subset_of_hard(trials, 200, seed + 4),
      soft_vs_oracle(trials, 60, seed + 5),
      conv_vs_oracle(trials, seed + 6),
      gradients_vs_fd(trials, seed + 7),
      rle_round_trip(trials, seed + 8),
  };
}

}  // namespace segpost::verify
