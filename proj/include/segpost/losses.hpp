#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "segpost/common.hpp"
#include "segpost/dynahead.hpp"
#include "segpost/maskcore.hpp"

namespace segpost {

struct LossConfig {
  double lambda = 3.0;       // mask-loss weight
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_epsilon = 1e-6;

  void validate() const {
    if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
    if (!(focal_alpha >= 0.0 && focal_alpha <= 1.0))
      throw DomainError("focal alpha outside [0,1]");
    if (!(focal_gamma >= 0.0)) throw DomainError("focal gamma must be >= 0");
    if (!(dice_epsilon > 0.0)) throw DomainError("dice epsilon must be > 0");
  }
};

struct LossWithGrad {
  double value = 0.0;
  std::vector<double> grad;  // d value / d pred, one per element
};

// L = 1 - 2 sum(p q) / (sum(p^2) + sum(q^2) + eps).
inline LossWithGrad dice_loss(std::span<const double> pred,
                              std::span<const double> target, double epsilon) {
  if (pred.size() != target.size())
    throw DimensionMismatch("dice: pred has " + std::to_string(pred.size()) +
                            " elements, target " + std::to_string(target.size()));
  double pq = 0.0, pp = 0.0, qq = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    pq += pred[k] * target[k];
    pp += pred[k] * pred[k];
    qq += target[k] * target[k];
  }
  const double den = pp + qq + epsilon;
  LossWithGrad out;
  out.value = 1.0 - 2.0 * pq / den;
  out.grad.resize(pred.size());
  const double den2 = den * den;
  for (std::size_t k = 0; k < pred.size(); ++k)
    out.grad[k] = -2.0 * target[k] / den + 4.0 * pq * pred[k] / den2;
  return out;
}

inline LossWithGrad dice_loss(const SoftMask& pred, const BinaryMask& target,
                              double epsilon = 1e-6) {
  if (pred.height() != target.height() || pred.width() != target.width())
    throw DimensionMismatch("dice: soft and target mask shapes differ");
  std::vector<double> q(target.size());
  for (std::size_t p = 0; p < q.size(); ++p) q[p] = target.bit(p) ? 1.0 : 0.0;
  return dice_loss(pred.values(), q, epsilon);
}

// L = -alpha_t (1 - p_t)^gamma log(p_t), gradient w.r.t. the predicted
// probability of the positive class.
inline LossWithGrad focal_loss(double pred, int target, double alpha, double gamma) {
  if (!(pred > 0.0 && pred < 1.0))
    throw DomainError("focal: prediction must lie strictly inside (0,1)");
  if (target != 0 && target != 1) throw DomainError("focal: target must be 0 or 1");
  const bool pos = target == 1;
  const double pt = pos ? pred : 1.0 - pred;
  const double at = pos ? alpha : 1.0 - alpha;
  const double one_m = 1.0 - pt;
  const double lg = std::log(pt);
  const double mod = std::pow(one_m, gamma);
  LossWithGrad out;
  out.value = -at * mod * lg;
  const double dmod = gamma == 0.0 ? 0.0 : gamma * std::pow(one_m, gamma - 1.0);
  const double dpt = at * (dmod * lg - mod / pt);
  out.grad = {pos ? dpt : -dpt};
  return out;
}

// mean(cate) + lambda * mean(mask); an empty list contributes 0.
inline double total_loss(std::span<const double> cate_terms,
                         std::span<const double> mask_terms, const LossConfig& cfg) {
  cfg.validate();
  auto mean = [](std::span<const double> v) {
    return v.empty() ? 0.0
                     : std::accumulate(v.begin(), v.end(), 0.0) /
                           static_cast<double>(v.size());
  };
  return mean(cate_terms) + cfg.lambda * mean(mask_terms);
}

}  // namespace segpost
