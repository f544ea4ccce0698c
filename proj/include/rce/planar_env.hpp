#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rce/common.hpp"
#include "rce/rng.hpp"

namespace rce {

// Top-down navigation arena: a square agent moves in a box among fixed
// circular obstacles. Observations are binary images of the scene; the
// obstacles are not drawn, only the agent is.
struct EnvConfig {
  double arena_size = 40.0;              // box side in pixels
  double agent_half_width = 2.0;         // agent square half side
  double max_action = 3.0;               // per-axis action clip
  double obstacle_radius = 2.5;
  std::vector<std::array<double, 2>> obstacle_centers = default_obstacles();
  double noise_sigma = 0.0;              // transition noise std dev, pixels

  static std::vector<std::array<double, 2>> default_obstacles() {
    std::vector<std::array<double, 2>> obs;
    for (double x : {13.5, 26.5})
      for (double y : {8.0, 20.0, 32.0}) obs.push_back({x, y});
    return obs;
  }

  int image_side() const { return static_cast<int>(std::llround(arena_size)); }
  int n_x() const { return image_side() * image_side(); }

  void validate() const {
    if (arena_size <= 0.0 || agent_half_width <= 0.0 || max_action <= 0.0 ||
        obstacle_radius < 0.0 || noise_sigma < 0.0)
      throw ConfigError("EnvConfig: sizes must be positive");
    if (2.0 * agent_half_width > arena_size)
      throw ConfigError("EnvConfig: agent does not fit in the arena");
  }

  bool operator==(const EnvConfig&) const = default;
};

struct PlanarState {
  double x = 0.0;
  double y = 0.0;
};

struct ObservationTriple {
  std::vector<double> x_t;     // image at time t
  std::vector<double> u;       // action
  std::vector<double> x_next;  // image at time t+1
  PlanarState s_t;             // ground-truth states, for evaluation only
  PlanarState s_next;
};

// True when the agent square centered at s overlaps any obstacle disc.
inline bool hits_obstacle(const EnvConfig& cfg, PlanarState s) {
  double h = cfg.agent_half_width;
  for (const auto& o : cfg.obstacle_centers) {
    // distance from disc center to the square
    double dx = std::fmax(std::fabs(o[0] - s.x) - h, 0.0);
    double dy = std::fmax(std::fabs(o[1] - s.y) - h, 0.0);
    if (dx * dx + dy * dy < cfg.obstacle_radius * cfg.obstacle_radius)
      return true;
  }
  return false;
}

inline bool state_valid(const EnvConfig& cfg, PlanarState s) {
  double h = cfg.agent_half_width;
  if (s.x < h || s.x > cfg.arena_size - h || s.y < h ||
      s.y > cfg.arena_size - h)
    return false;
  return !hits_obstacle(cfg, s);
}

// One transition: clip the action per axis, add optional Gaussian noise,
// clamp the candidate to the arena, and reject it (stay put) if the agent
// would overlap an obstacle.
inline PlanarState step(const EnvConfig& cfg, PlanarState s,
                        std::span<const double> u,
                        std::span<const double> noise = {}) {
  if (u.size() != 2)
    throw DimensionError("step: action must have 2 components");
  if (!noise.empty() && noise.size() != 2)
    throw DimensionError("step: noise must have 2 components");
  double a = cfg.max_action;
  double ux = std::fmin(std::fmax(u[0], -a), a);
  double uy = std::fmin(std::fmax(u[1], -a), a);
  PlanarState cand{s.x + ux, s.y + uy};
  if (!noise.empty()) {
    cand.x += noise[0];
    cand.y += noise[1];
  }
  double h = cfg.agent_half_width;
  cand.x = std::fmin(std::fmax(cand.x, h), cfg.arena_size - h);
  cand.y = std::fmin(std::fmax(cand.y, h), cfg.arena_size - h);
  return hits_obstacle(cfg, cand) ? s : cand;
}

// Binary image of the agent: pixel (row, col) is 1 when its center
// (col + 0.5, row + 0.5) lies inside the agent square. The half-open test
// keeps the lit pixel count at (2 * half_width)^2 for every position.
inline std::vector<double> render(const EnvConfig& cfg, PlanarState s) {
  int side = cfg.image_side();
  std::vector<double> img(static_cast<std::size_t>(side) * side, 0.0);
  double h = cfg.agent_half_width;
  for (int row = 0; row < side; ++row) {
    double py = row + 0.5;
    if (py < s.y - h || py >= s.y + h) continue;
    for (int col = 0; col < side; ++col) {
      double px = col + 0.5;
      if (px >= s.x - h && px < s.x + h)
        img[static_cast<std::size_t>(row) * side + col] = 1.0;
    }
  }
  return img;
}

// Uniform over valid states, by rejection.
inline PlanarState sample_valid_state(const EnvConfig& cfg, Rng& rng) {
  double h = cfg.agent_half_width;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    PlanarState s{rng.uniform(h, cfg.arena_size - h),
                  rng.uniform(h, cfg.arena_size - h)};
    if (!hits_obstacle(cfg, s)) return s;
  }
  throw ConfigError("sample_valid_state: no valid state found");
}

struct PlanarTask {
  PlanarState start;
  PlanarState goal;
};

// A random navigation task: start and goal uniform over valid states, with
// the goal redrawn until the pair is at least min_dist apart (capped at a
// quarter of the usable span so small arenas stay feasible).
inline PlanarTask sample_task(const EnvConfig& cfg, Rng& rng,
                              double min_dist) {
  PlanarTask task{sample_valid_state(cfg, rng), PlanarState{}};
  task.goal = task.start;
  double sep = std::min(
      min_dist, 0.25 * (cfg.arena_size - 2.0 * cfg.agent_half_width));
  for (int tries = 0; tries < 200; ++tries) {
    task.goal = sample_valid_state(cfg, rng);
    if (std::hypot(task.goal.x - task.start.x, task.goal.y - task.start.y) >=
        sep)
      break;
  }
  return task;
}

// The navigation benchmark task: start near one arena corner, goal near the
// opposite one, jittered inside corner boxes of the given margin so repeated
// runs differ. Falls back to rejection sampling when a box is fully blocked.
inline PlanarTask sample_corner_task(const EnvConfig& cfg, Rng& rng,
                                     double margin = 3.0) {
  double h = cfg.agent_half_width;
  double m = std::min(margin, cfg.arena_size / 2.0 - h);
  auto in_box = [&](double lo, double hi) -> PlanarState {
    for (int tries = 0; tries < 100; ++tries) {
      PlanarState s{rng.uniform(lo, hi), rng.uniform(lo, hi)};
      if (state_valid(cfg, s)) return s;
    }
    return sample_valid_state(cfg, rng);
  };
  PlanarTask task;
  task.start = in_box(h, h + m);
  task.goal = in_box(cfg.arena_size - h - m, cfg.arena_size - h);
  return task;
}

// n independent triples (x_t, u, x_next). Each sample derives its own seed
// from (seed, index), so the dataset does not depend on generation order.
inline std::vector<ObservationTriple> generate_dataset(const EnvConfig& cfg,
                                                       int n,
                                                       std::uint64_t seed) {
  cfg.validate();
  if (n <= 0) throw ConfigError("generate_dataset: n must be positive");
  std::vector<ObservationTriple> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    ObservationTriple& t = out[static_cast<std::size_t>(i)];
    t.s_t = sample_valid_state(cfg, rng);
    double a = cfg.max_action;
    t.u = {rng.uniform(-a, a), rng.uniform(-a, a)};
    std::array<double, 2> noise{cfg.noise_sigma * rng.normal(),
                                cfg.noise_sigma * rng.normal()};
    t.s_next = step(cfg, t.s_t, t.u, noise);
    t.x_t = render(cfg, t.s_t);
    t.x_next = render(cfg, t.s_next);
  }
  return out;
}

}  // namespace rce
