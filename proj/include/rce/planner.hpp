#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rce/common.hpp"
#include "rce/model.hpp"
#include "rce/planar_env.hpp"
#include "rce/rng.hpp"

namespace rce::plan {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// One linearization z' = A z + B u + c of the latent dynamics.
struct AffineStep {
  Mat A;
  Mat B;
  Vec c;
};

inline AffineStep to_affine(const LocalLinearDynamics& d) {
  int nz = d.n_z(), nu = d.n_u();
  AffineStep s;
  Tensor a = d.A();
  s.A = Mat(nz, nz);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nz; ++j) s.A(i, j) = a.at(i, j);
  s.B = Mat(nz, nu);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nu; ++j) s.B(i, j) = d.B.at(i, j);
  s.c = Vec(nz);
  for (int i = 0; i < nz; ++i) s.c(i) = d.c[static_cast<std::size_t>(i)];
  return s;
}

// Latent dynamics as the planner sees them: a fresh linearization at every
// query point. Virtual so tests can plug in analytic systems.
class LatentModel {
 public:
  virtual ~LatentModel() = default;
  virtual int latent_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual AffineStep linearize(const Vec& z, const Vec& u) const = 0;

  Vec forward(const Vec& z, const Vec& u) const {
    AffineStep s = linearize(z, u);
    return s.A * z + s.B * u + s.c;
  }
};

// Adapts a trained pixel model's local linearization to the planner.
class PixelDynamics final : public LatentModel {
 public:
  explicit PixelDynamics(const PixelModel& m) : m_(&m) {}
  int latent_dim() const override { return m_->latent_dim(); }
  int action_dim() const override { return m_->action_dim(); }
  AffineStep linearize(const Vec& z, const Vec& u) const override {
    std::vector<double> zv(z.data(), z.data() + z.size());
    std::vector<double> uv(u.data(), u.data() + u.size());
    return to_affine(m_->linearize_at(zv, uv));
  }

 private:
  const PixelModel* m_;
};

struct PlanConfig {
  int horizon = 40;
  int ilqr_iters = 10;
  Mat Q;  // latent state cost, positive semidefinite
  Mat R;  // action cost, positive definite
  double action_clip = 3.0;
  double levenberg_mu0 = 1e-6;
  double levenberg_mu_max = 1e6;

  static PlanConfig defaults(int nz, int nu) {
    PlanConfig cfg;
    cfg.Q = Mat::Identity(nz, nz);
    cfg.R = 0.01 * Mat::Identity(nu, nu);
    return cfg;
  }

  void validate(int nz, int nu) const {
    if (horizon < 0) throw ConfigError("PlanConfig: horizon must be nonnegative");
    if (ilqr_iters < 0) throw ConfigError("PlanConfig: ilqr_iters must be nonnegative");
    if (!(action_clip > 0.0)) throw ConfigError("PlanConfig: action_clip must be positive");
    if (!(levenberg_mu0 > 0.0) || !(levenberg_mu_max >= levenberg_mu0))
      throw ConfigError("PlanConfig: bad Levenberg range");
    if (Q.rows() != nz || Q.cols() != nz || R.rows() != nu || R.cols() != nu)
      throw ConfigError("PlanConfig: Q or R has the wrong size");
    if (!Q.isApprox(Q.transpose(), 1e-9) || !R.isApprox(R.transpose(), 1e-9))
      throw ConfigError("PlanConfig: Q and R must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> qe(Q);
    if (qe.eigenvalues().minCoeff() < -1e-9)
      throw ConfigError("PlanConfig: Q must be positive semidefinite");
    Eigen::LLT<Mat> rl(R);
    if (rl.info() != Eigen::Success)
      throw ConfigError("PlanConfig: R must be positive definite");
  }
};

// Reference trajectory: latents z_0..z_H, actions u_0..u_{H-1}, and the
// linearization recorded at each visited (z_t, u_t).
struct ReferenceTrajectory {
  std::vector<Vec> latents;
  std::vector<Vec> actions;
  std::vector<AffineStep> dynamics;
};

// Quadratic tracking cost around z_goal:
//   sum_t [ (z_t-g)'Q(z_t-g) + u_t'R u_t ]  +  (z_H-g)'Q(z_H-g).
inline double trajectory_cost(std::span<const Vec> latents,
                              std::span<const Vec> actions, const Vec& z_goal,
                              const Mat& Q, const Mat& R) {
  if (latents.size() != actions.size() + 1)
    throw DimensionError("trajectory_cost: need one more latent than actions");
  double cost = 0.0;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    Vec y = latents[t] - z_goal;
    cost += y.dot(Q * y) + actions[t].dot(R * actions[t]);
  }
  Vec yH = latents.back() - z_goal;
  cost += yH.dot(Q * yH);
  return cost;
}

// Rolls the model forward under a fixed action sequence.
inline ReferenceTrajectory rollout_reference(const LatentModel& model,
                                             const Vec& z_init,
                                             std::span<const Vec> actions) {
  if (z_init.size() != model.latent_dim())
    throw DimensionError("rollout_reference: wrong latent size");
  ReferenceTrajectory traj;
  traj.latents.reserve(actions.size() + 1);
  traj.latents.push_back(z_init);
  Vec z = z_init;
  for (const Vec& u : actions) {
    if (u.size() != model.action_dim())
      throw DimensionError("rollout_reference: wrong action size");
    AffineStep s = model.linearize(z, u);
    z = s.A * z + s.B * u + s.c;
    if (!z.allFinite())
      throw PlannerError("rollout_reference: latent trajectory diverged");
    traj.dynamics.push_back(std::move(s));
    traj.actions.push_back(u);
    traj.latents.push_back(z);
  }
  return traj;
}

// Time-varying LQR policy around a reference, in homogeneous coordinates
// ytil = [z - z_goal; 1]: u_t(z) = -gains[t] * ytil.
struct LqrPolicy {
  std::vector<Mat> gains;       // H of (nu x nz+1)
  std::vector<Mat> cost_to_go;  // H+1 of (nz+1 x nz+1)

  // Predicted optimal cost from state z at step t.
  double predicted_cost(const Vec& z, const Vec& z_goal, std::size_t t) const {
    Vec ytil(z.size() + 1);
    ytil << z - z_goal, 1.0;
    return ytil.dot(cost_to_go[t] * ytil);
  }
};

// Finite-horizon Riccati recursion over the reference's local dynamics. The
// offset (A_t - I) z_goal + c_t enters through the homogeneous coordinate, so
// goal tracking with drifting dynamics stays a pure LQR problem. If the
// control Hessian is not positive definite it is shifted by mu*I with mu
// escalating tenfold from levenberg_mu0; exceeding levenberg_mu_max throws
// PlannerError.
inline LqrPolicy lqr_backward(const ReferenceTrajectory& traj,
                              const Vec& z_goal, const PlanConfig& cfg) {
  std::size_t H = traj.dynamics.size();
  int nz = static_cast<int>(z_goal.size());
  int nu = cfg.R.rows();
  Mat Qtil = Mat::Zero(nz + 1, nz + 1);
  Qtil.topLeftCorner(nz, nz) = cfg.Q;

  LqrPolicy pol;
  pol.gains.assign(H, Mat());
  pol.cost_to_go.assign(H + 1, Mat());
  pol.cost_to_go[H] = Qtil;

  for (std::size_t t = H; t-- > 0;) {
    const AffineStep& d = traj.dynamics[t];
    Mat Atil = Mat::Zero(nz + 1, nz + 1);
    Atil.topLeftCorner(nz, nz) = d.A;
    Atil.topRightCorner(nz, 1) = (d.A - Mat::Identity(nz, nz)) * z_goal + d.c;
    Atil(nz, nz) = 1.0;
    Mat Btil = Mat::Zero(nz + 1, nu);
    Btil.topRows(nz) = d.B;

    const Mat& Vn = pol.cost_to_go[t + 1];
    Mat Huu = cfg.R + Btil.transpose() * Vn * Btil;
    Mat Huy = Btil.transpose() * Vn * Atil;

    double mu = 0.0;
    Eigen::LLT<Mat> llt;
    for (;;) {
      Mat Huu_reg = Huu + mu * Mat::Identity(nu, nu);
      if (Huu_reg.allFinite()) {
        llt.compute(Huu_reg);
        if (llt.info() == Eigen::Success) {
          Huu = Huu_reg;
          break;
        }
      }
      mu = mu == 0.0 ? cfg.levenberg_mu0 : 10.0 * mu;
      if (mu > cfg.levenberg_mu_max)
        throw PlannerError(
            "lqr_backward: control Hessian not positive definite at step " +
            std::to_string(t));
    }

    Mat K = llt.solve(Huy);
    Mat V = Qtil + Atil.transpose() * Vn * Atil - Huy.transpose() * K;
    pol.cost_to_go[t] = 0.5 * (V + V.transpose());
    pol.gains[t] = std::move(K);
  }
  return pol;
}

struct IlqrResult {
  std::vector<Vec> actions;
  double cost = 0.0;
  // Cost after the initial rollout and after each accepted line-search step;
  // non-increasing by construction.
  std::vector<double> accepted_costs;
};

namespace detail {

inline Vec clip_per_axis(Vec u, double lim) {
  for (int i = 0; i < u.size(); ++i)
    u(i) = std::fmin(std::fmax(u(i), -lim), lim);
  return u;
}

struct PolicyRollout {
  ReferenceTrajectory traj;
  double cost = 0.0;
};

// Applies the LQR controller around `ref` blended by alpha:
//   u = u_ref + alpha (u_pol(z_ref) - u_ref) + feedback on (z - z_ref),
// clipping per axis. Returns nothing if the rollout leaves finite range.
inline std::optional<PolicyRollout> rollout_policy(
    const LatentModel& model, const ReferenceTrajectory& ref,
    const LqrPolicy& pol, const Vec& z_goal, double alpha,
    const PlanConfig& cfg) {
  int nz = static_cast<int>(z_goal.size());
  PolicyRollout out;
  Vec z = ref.latents.front();
  out.traj.latents.push_back(z);
  for (std::size_t t = 0; t < ref.actions.size(); ++t) {
    Vec ytil(nz + 1);
    ytil << ref.latents[t] - z_goal, 1.0;
    Vec u_pol_ref = -pol.gains[t] * ytil;
    Mat Kz = pol.gains[t].leftCols(nz);
    Vec u = ref.actions[t] + alpha * (u_pol_ref - ref.actions[t]) -
            Kz * (z - ref.latents[t]);
    u = clip_per_axis(std::move(u), cfg.action_clip);
    AffineStep s = model.linearize(z, u);
    z = s.A * z + s.B * u + s.c;
    if (!z.allFinite()) return std::nullopt;
    out.traj.dynamics.push_back(std::move(s));
    out.traj.actions.push_back(std::move(u));
    out.traj.latents.push_back(z);
  }
  out.cost = trajectory_cost(out.traj.latents, out.traj.actions, z_goal,
                             cfg.Q, cfg.R);
  return out;
}

}  // namespace detail

// Iterative LQR from an initial action sequence. Each iteration linearizes
// along the current trajectory, solves the tracking LQR, and line-searches
// the blended controller over alpha in {1, 1/2, ..., 1/64}, keeping the
// first rollout that lowers the cost. Stops early when no alpha helps;
// always returns the best trajectory found.
inline IlqrResult ilqr(const LatentModel& model, const Vec& z_init,
                       const Vec& z_goal, std::vector<Vec> init_actions,
                       const PlanConfig& cfg) {
  int nz = model.latent_dim(), nu = model.action_dim();
  cfg.validate(nz, nu);
  if (z_goal.size() != nz) throw DimensionError("ilqr: wrong goal size");
  for (Vec& u : init_actions) {
    if (u.size() != nu) throw DimensionError("ilqr: wrong action size");
    u = detail::clip_per_axis(std::move(u), cfg.action_clip);
  }

  ReferenceTrajectory traj = rollout_reference(model, z_init, init_actions);
  double best = trajectory_cost(traj.latents, traj.actions, z_goal, cfg.Q,
                                cfg.R);
  IlqrResult res;
  res.accepted_costs.push_back(best);
  if (init_actions.empty()) {
    res.cost = best;
    return res;
  }

  for (int iter = 0; iter < cfg.ilqr_iters; ++iter) {
    LqrPolicy pol = lqr_backward(traj, z_goal, cfg);
    bool improved = false;
    for (double alpha = 1.0; alpha >= 1.0 / 64.0 - 1e-12; alpha *= 0.5) {
      auto cand =
          detail::rollout_policy(model, traj, pol, z_goal, alpha, cfg);
      if (cand && cand->cost < best) {
        traj = std::move(cand->traj);
        best = cand->cost;
        res.accepted_costs.push_back(best);
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  res.actions = traj.actions;
  res.cost = best;
  return res;
}

// Result of executing a planner in the real environment. states has one more
// entry than actions; latent_goal_dist[t] is the embedding-space distance to
// the goal after executing step t.
struct ControlTrace {
  std::vector<PlanarState> states;
  std::vector<std::array<double, 2>> actions;
  std::vector<double> latent_goal_dist;
  bool failed = false;
  int fail_step = -1;
};

// Receding-horizon control: encode start and goal images, optimize an
// H-step action sequence with iLQR, apply the first action in the real
// environment, re-encode the new observation, then shift the sequence left
// and append one fresh random action. Repeats for T steps. Planner failures
// mark the trace failed and stop the run.
inline ControlTrace receding_horizon_control(const EnvConfig& env,
                                             const PixelModel& model,
                                             PlanarState s_init,
                                             PlanarState s_goal, int T,
                                             const PlanConfig& cfg,
                                             std::uint64_t seed) {
  env.validate();
  if (T <= 0) throw ConfigError("receding_horizon_control: T must be positive");
  int nz = model.latent_dim(), nu = model.action_dim();
  cfg.validate(nz, nu);
  if (nu != 2)
    throw ConfigError("receding_horizon_control: planar actions have 2 axes");

  PixelDynamics dyn(model);
  auto embed = [&](PlanarState s) {
    std::vector<double> m = model.encode_mean(render(env, s));
    return Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size()))
        .eval();
  };
  Vec z_goal = embed(s_goal);
  Vec z = embed(s_init);

  Rng rng(seed);
  double lim = std::fmin(cfg.action_clip, env.max_action);
  auto random_action = [&]() {
    Vec u(nu);
    for (int i = 0; i < nu; ++i) u(i) = rng.uniform(-lim, lim);
    return u;
  };
  std::vector<Vec> actions(static_cast<std::size_t>(cfg.horizon));
  for (Vec& u : actions) u = random_action();

  ControlTrace trace;
  trace.states.push_back(s_init);
  PlanarState s = s_init;
  for (int t = 0; t < T; ++t) {
    IlqrResult plan;
    try {
      plan = ilqr(dyn, z, z_goal, actions, cfg);
    } catch (const PlannerError&) {
      trace.failed = true;
      trace.fail_step = t;
      break;
    }
    Vec u0 = plan.actions.empty() ? Vec::Zero(nu).eval() : plan.actions[0];
    std::array<double, 2> noise{env.noise_sigma * rng.normal(),
                                env.noise_sigma * rng.normal()};
    s = step(env, s, std::vector<double>{u0(0), u0(1)}, noise);
    z = embed(s);
    trace.states.push_back(s);
    trace.actions.push_back({u0(0), u0(1)});
    trace.latent_goal_dist.push_back((z - z_goal).norm());

    // Shift the optimized sequence, topping it up with exploration.
    if (!plan.actions.empty()) {
      actions.assign(plan.actions.begin() + 1, plan.actions.end());
      actions.push_back(random_action());
    }
  }
  return trace;
}

}  // namespace rce::plan
