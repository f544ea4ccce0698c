#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "rce/common.hpp"
#include "rce/distributions.hpp"
#include "rce/model.hpp"
#include "rce/planar_env.hpp"
#include "rce/planner.hpp"

namespace rce::eval {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  out.n = xs.size();
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

// Negative Bernoulli log-likelihood of each current image under its own
// encoding: encode to the posterior mean, decode, score against the input.
// Per-image sums, in nats.
inline MeanStd reconstruction_loss(const PixelModel& model,
                                   std::span<const ObservationTriple> data) {
  std::vector<double> losses;
  losses.reserve(data.size());
  for (const ObservationTriple& t : data) {
    std::vector<double> z = model.encode_mean(t.x_t);
    std::vector<double> logits = model.decode(z);
    losses.push_back(-bernoulli_log_likelihood(logits, t.x_t));
  }
  return mean_std(losses);
}

// Negative Bernoulli log-likelihood of each next image under the model's
// one-step prediction: encode the current image, push the posterior mean
// through the local linear dynamics, decode.
inline MeanStd prediction_loss(const PixelModel& model,
                               std::span<const ObservationTriple> data) {
  std::vector<double> losses;
  losses.reserve(data.size());
  for (const ObservationTriple& t : data) {
    std::vector<double> z = model.encode_mean(t.x_t);
    LocalLinearDynamics dyn = model.linearize_at(z, t.u);
    std::vector<double> z_next = forward_transition(dyn, z, t.u);
    std::vector<double> logits = model.decode(z_next);
    losses.push_back(-bernoulli_log_likelihood(logits, t.x_next));
  }
  return mean_std(losses);
}

struct PlanningOutcome {
  double cost = 0.0;
  bool failed = false;
};

// Quadratic goal-tracking cost of an executed trace in the true state space:
//   sum_t (s_t - g)'Q(s_t - g) + u_t'R u_t
// over the state each action was taken from. A trace that is already at the
// goal and stays there with zero actions has zero cost.
inline PlanningOutcome planning_loss(const plan::ControlTrace& trace,
                                     PlanarState goal, const plan::Mat& Q,
                                     const plan::Mat& R) {
  if (Q.rows() != 2 || Q.cols() != 2 || R.rows() != 2 || R.cols() != 2)
    throw DimensionError("planning_loss: Q and R must be 2x2");
  if (trace.states.size() != trace.actions.size() + 1)
    throw DimensionError("planning_loss: trace has mismatched lengths");
  PlanningOutcome out;
  out.failed = trace.failed;
  plan::Vec g(2);
  g << goal.x, goal.y;
  for (std::size_t t = 0; t < trace.actions.size(); ++t) {
    plan::Vec s(2), u(2);
    s << trace.states[t].x, trace.states[t].y;
    u << trace.actions[t][0], trace.actions[t][1];
    plan::Vec y = s - g;
    out.cost += y.dot(Q * y) + u.dot(R * u);
  }
  return out;
}

inline double distance_to(PlanarState s, PlanarState goal) {
  return std::hypot(s.x - goal.x, s.y - goal.y);
}

// A run succeeds when the agent reaches the eps-ball around the goal at some
// step and never leaves it for the remainder of the run. The initial state
// does not count as reaching.
inline bool run_success(const plan::ControlTrace& trace, PlanarState goal,
                        double eps) {
  if (!(eps > 0.0)) throw DomainError("run_success: eps must be positive");
  if (trace.failed) return false;
  std::size_t n = trace.states.size();
  if (n < 2) return false;
  std::size_t first_in = n;
  for (std::size_t t = n; t-- > 1;) {
    if (distance_to(trace.states[t], goal) <= eps)
      first_in = t;
    else
      break;  // anything earlier cannot stay inside through the end
  }
  return first_in < n;
}

inline double success_rate(std::span<const plan::ControlTrace> traces,
                           std::span<const PlanarState> goals, double eps) {
  if (traces.size() != goals.size())
    throw DimensionError("success_rate: traces and goals differ in length");
  if (traces.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < traces.size(); ++i)
    if (run_success(traces[i], goals[i], eps)) ++ok;
  return static_cast<double>(ok) / static_cast<double>(traces.size());
}

}  // namespace rce::eval
