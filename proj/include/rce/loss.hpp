#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rce/common.hpp"
#include "rce/distributions.hpp"
#include "rce/model.hpp"
#include "rce/tensor.hpp"

namespace rce {

// Weights of the two regularization terms in the training objective, with an
// optional piecewise-linear schedule over epochs. When a schedule is set it
// drives both weights and its final value must be 1, so training always ends
// on the plain bound.
struct LossWeights {
  double w_kl = 1.0;
  double w_logp = 1.0;
  // (epoch, value) breakpoints, strictly increasing epochs.
  std::vector<std::pair<int, double>> schedule;

  void validate() const {
    if (!(w_kl >= 0.0) || !(w_logp >= 0.0))
      throw ConfigError("LossWeights: weights must be nonnegative");
    for (std::size_t i = 0; i + 1 < schedule.size(); ++i)
      if (schedule[i].first >= schedule[i + 1].first)
        throw ConfigError("LossWeights: schedule epochs must increase");
    for (const auto& [e, v] : schedule)
      if (!(v >= 0.0)) throw ConfigError("LossWeights: schedule values must be nonnegative");
    if (!schedule.empty() && schedule.back().second != 1.0)
      throw ConfigError("LossWeights: schedule must end at weight 1");
  }

  // Effective (w_kl, w_logp) at a 1-based epoch.
  std::pair<double, double> at_epoch(int epoch) const {
    if (schedule.empty()) return {w_kl, w_logp};
    double v;
    if (epoch <= schedule.front().first) {
      v = schedule.front().second;
    } else if (epoch >= schedule.back().first) {
      v = schedule.back().second;
    } else {
      v = schedule.back().second;
      for (std::size_t i = 0; i + 1 < schedule.size(); ++i) {
        if (epoch <= schedule[i + 1].first) {
          auto [e0, v0] = schedule[i];
          auto [e1, v1] = schedule[i + 1];
          double f = double(epoch - e0) / double(e1 - e0);
          v = v0 + f * (v1 - v0);
          break;
        }
      }
    }
    return {v, v};
  }

  bool operator==(const LossWeights&) const = default;
};

struct LossTerms {
  double bce = 0.0;      // E log p(x_next | z_next), image log-likelihood
  double kl = 0.0;       // KL(q(z_bar | x_t, z_next) || p(z | x_t))
  double entropy = 0.0;  // H(q(z_next | x_next))
  double logp = 0.0;     // log p(z_t | x_t) at the reconstructed z_t
  double total = 0.0;    // -(bce - w_kl * kl + entropy + w_logp * logp)
};

struct LossNodes {
  Tape::Id loss;
  LossTerms terms;
};

// Training objective for one (x_t, u, x_next) triple, built on `tape` so the
// caller can backpropagate through it. eps1 and eps2 are the standard-normal
// draws for the two reparameterized samples (z_next and z_bar). The returned
// scalar node is the negated lower bound; minimizing it maximizes the bound.
inline LossNodes rce_loss(Tape& tape, const ModelTape& model,
                          std::span<const double> x_t,
                          std::span<const double> u,
                          std::span<const double> x_next,
                          std::span<const double> eps1,
                          std::span<const double> eps2, double w_kl,
                          double w_logp) {
  const NetConfig& net = model.net();
  auto want = [](std::span<const double> v, int n, const char* name) {
    if (v.size() != static_cast<std::size_t>(n))
      throw DimensionError(std::string("rce_loss: ") + name +
                           " has wrong length");
  };
  want(x_t, net.n_x, "x_t");
  want(u, net.n_u, "u");
  want(x_next, net.n_x, "x_next");
  want(eps1, net.n_z, "eps1");
  want(eps2, net.n_z, "eps2");

  Tape::Id x0 = tape.constant_vector(x_t);
  Tape::Id x1 = tape.constant_vector(x_next);
  Tape::Id uu = tape.constant_vector(u);
  Tape::Id e1 = tape.constant_vector(eps1);
  Tape::Id e2 = tape.constant_vector(eps2);

  GaussNodes q_next = model.encode(x1);
  Tape::Id z_next = sample_reparam_node(tape, q_next, e1);
  GaussNodes q_bar = model.backward_encode(x0, z_next);
  Tape::Id z_bar = sample_reparam_node(tape, q_bar, e2);
  ModelTape::DynNodes dyn = model.linearize(z_bar, uu);
  Tape::Id z_t = model.reverse_transition(dyn, z_next, uu);
  GaussNodes p_t = model.encode(x0);
  Tape::Id logits = model.decode(z_next);

  Tape::Id bce = bernoulli_log_likelihood_node(tape, logits, x1);
  Tape::Id kl = kl_diag_node(tape, q_bar, p_t);
  Tape::Id ent = entropy_node(tape, q_next.log_var);
  Tape::Id logp = log_prob_node(tape, p_t, z_t);

  Tape::Id bound =
      tape.add(tape.sub(bce, tape.scale(kl, w_kl)),
               tape.add(ent, tape.scale(logp, w_logp)));
  Tape::Id loss = tape.neg(bound);

  LossNodes out;
  out.loss = loss;
  out.terms.bce = tape.value_scalar(bce);
  out.terms.kl = tape.value_scalar(kl);
  out.terms.entropy = tape.value_scalar(ent);
  out.terms.logp = tape.value_scalar(logp);
  out.terms.total = tape.value_scalar(loss);

  auto check = [](double v, const char* name) {
    if (!std::isfinite(v))
      throw NumericError(std::string("rce_loss: non-finite ") + name +
                         " term");
  };
  check(out.terms.bce, "reconstruction");
  check(out.terms.kl, "kl");
  check(out.terms.entropy, "entropy");
  check(out.terms.logp, "latent log-likelihood");
  return out;
}

}  // namespace rce
