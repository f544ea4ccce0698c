#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "rce/common.hpp"
#include "rce/tensor.hpp"

namespace rce {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline const double kLn2Pi = std::log(2.0 * kPi);

// Gaussian with diagonal covariance, parameterized by per-dimension mean and
// log variance. Log variances are clamped to [-10, 10] on construction; the
// networks produce them through the same clamp, so variances stay in
// [e^-10, e^10] everywhere.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;

  DiagGaussian() = default;

  DiagGaussian(std::vector<double> m, std::vector<double> lv)
      : mean(std::move(m)), log_var(std::move(lv)) {
    if (mean.size() != log_var.size() || mean.empty())
      throw DimensionError("DiagGaussian: mean and log_var sizes differ");
    if (!all_finite(mean) || !all_finite(log_var))
      throw NumericError("DiagGaussian: non-finite parameter");
    for (double& v : log_var)
      v = v < kLogVarMin ? kLogVarMin : (v > kLogVarMax ? kLogVarMax : v);
  }

  int dim() const { return static_cast<int>(mean.size()); }

  double std_dev(int i) const { return std::exp(0.5 * log_var[i]); }
};

// mean + exp(log_var / 2) * eps, the reparameterized sample.
inline std::vector<double> sample_reparam(const DiagGaussian& d,
                                          std::span<const double> eps) {
  if (eps.size() != d.mean.size())
    throw DimensionError("sample_reparam: eps size differs from dimension");
  std::vector<double> out(d.mean.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = d.mean[i] + std::exp(0.5 * d.log_var[i]) * eps[i];
  return out;
}

// KL(q || p) between diagonal Gaussians, in nats.
inline double kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim())
    throw DimensionError("kl_diag: dimension mismatch");
  double acc = 0.0;
  for (int i = 0; i < q.dim(); ++i) {
    double ratio = std::exp(q.log_var[i] - p.log_var[i]);
    double diff = p.mean[i] - q.mean[i];
    acc += ratio + diff * diff * std::exp(-p.log_var[i]) + p.log_var[i] -
           q.log_var[i] - 1.0;
  }
  return 0.5 * acc;
}

// Differential entropy, in nats.
inline double entropy(const DiagGaussian& d) {
  double acc = 0.0;
  for (double lv : d.log_var) acc += lv;
  return 0.5 * (acc + d.dim() * (kLn2Pi + 1.0));
}

// Log density at x.
inline double log_prob(const DiagGaussian& d, std::span<const double> x) {
  if (x.size() != d.mean.size())
    throw DimensionError("log_prob: point size differs from dimension");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double diff = x[i] - d.mean[i];
    acc += d.log_var[i] + diff * diff * std::exp(-d.log_var[i]);
  }
  return -0.5 * (acc + d.dim() * kLn2Pi);
}

// Sum over pixels of log Bernoulli(target | sigmoid(logit)), computed from
// logits without forming probabilities:
//   t * l - log(1 + e^l)  ==  t * l - softplus(l).
// Targets must lie in [0, 1].
inline double bernoulli_log_likelihood(std::span<const double> logits,
                                       std::span<const double> targets) {
  if (logits.size() != targets.size())
    throw DimensionError("bernoulli_log_likelihood: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double t = targets[i];
    if (!(t >= 0.0 && t <= 1.0))
      throw DomainError("bernoulli_log_likelihood: target outside [0, 1]");
    acc += t * logits[i] - stable_softplus(logits[i]);
  }
  return acc;
}

// ---- tape composites ----
//
// Same formulas assembled from tape primitives so gradients flow through the
// distribution parameters. Each returns the node Id of the result.

struct GaussNodes {
  Tape::Id mean;
  Tape::Id log_var;
};

inline Tape::Id sample_reparam_node(Tape& t, GaussNodes d, Tape::Id eps) {
  return t.add(d.mean, t.mul(t.exp(t.scale(d.log_var, 0.5)), eps));
}

inline Tape::Id kl_diag_node(Tape& t, GaussNodes q, GaussNodes p) {
  int n = t.rows(q.mean);
  Tape::Id ratio = t.exp(t.sub(q.log_var, p.log_var));
  Tape::Id diff = t.sub(p.mean, q.mean);
  Tape::Id maha = t.mul(t.mul(diff, diff), t.exp(t.neg(p.log_var)));
  Tape::Id lv_gap = t.sub(p.log_var, q.log_var);
  Tape::Id total = t.sum(t.add(t.add(ratio, maha), lv_gap));
  return t.scale(t.add_scalar(total, -static_cast<double>(n)), 0.5);
}

inline Tape::Id entropy_node(Tape& t, Tape::Id log_var) {
  int n = t.rows(log_var);
  return t.scale(t.add_scalar(t.sum(log_var), n * (kLn2Pi + 1.0)), 0.5);
}

inline Tape::Id log_prob_node(Tape& t, GaussNodes d, Tape::Id x) {
  int n = t.rows(d.mean);
  Tape::Id diff = t.sub(x, d.mean);
  Tape::Id maha = t.mul(t.mul(diff, diff), t.exp(t.neg(d.log_var)));
  Tape::Id total = t.add(t.sum(d.log_var), t.sum(maha));
  return t.scale(t.add_scalar(total, n * kLn2Pi), -0.5);
}

inline Tape::Id bernoulli_log_likelihood_node(Tape& t, Tape::Id logits,
                                              Tape::Id targets) {
  for (double v : t.value(targets))
    if (!(v >= 0.0 && v <= 1.0))
      throw DomainError("bernoulli_log_likelihood_node: target outside [0, 1]");
  return t.sum(t.sub(t.mul(targets, logits), t.softplus(logits)));
}

}  // namespace rce
