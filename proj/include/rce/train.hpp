#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "rce/common.hpp"
#include "rce/loss.hpp"
#include "rce/model.hpp"
#include "rce/planar_env.hpp"
#include "rce/rng.hpp"

namespace rce {

struct TrainConfig {
  int batch_size = 128;
  int epochs = 50;
  double learning_rate = 1e-4;
  std::array<double, 2> adam_betas{0.9, 0.999};
  double adam_eps = 1e-8;
  double grad_clip_norm = 10.0;  // global l2 norm; <= 0 disables
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between snapshots; 0 = final only
  int workers = 1;           // gradient worker threads
  NetConfig net;
  LossWeights weights;

  void validate() const {
    if (batch_size <= 0) throw ConfigError("TrainConfig: batch_size must be positive");
    if (epochs <= 0) throw ConfigError("TrainConfig: epochs must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be positive");
    for (double b : adam_betas)
      if (!(b >= 0.0 && b < 1.0)) throw ConfigError("TrainConfig: betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("TrainConfig: adam_eps must be positive");
    if (workers <= 0) throw ConfigError("TrainConfig: workers must be positive");
    if (checkpoint_every < 0) throw ConfigError("TrainConfig: checkpoint_every must be nonnegative");
    net.validate();
    weights.validate();
  }
};

// Per-epoch averages of the loss and its terms, plus wall time.
struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double bce = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  double logp = 0.0;
  double wall_seconds = 0.0;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;

  static AdamState for_params(RceParams& p) {
    AdamState st;
    for (auto& [name, t] : p.named_tensors()) {
      st.m.emplace_back(t->size(), 0.0);
      st.v.emplace_back(t->size(), 0.0);
    }
    return st;
  }
};

// One Adam update from the gradients stored in the parameter tensors.
inline void adam_step(RceParams& params, AdamState& st, double lr,
                      std::array<double, 2> betas, double eps) {
  auto named = params.named_tensors();
  if (st.m.size() != named.size())
    throw ContractError("adam_step: state does not match parameters");
  ++st.step;
  double b1 = betas[0], b2 = betas[1];
  double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < named.size(); ++k) {
    Tensor& t = *named[k].second;
    if (t.grad.size() != t.data.size())
      throw ContractError("adam_step: missing gradient for " + named[k].first);
    std::vector<double>& m = st.m[k];
    std::vector<double>& v = st.v[k];
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      double gi = t.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      t.data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

// Scales gradients so their global l2 norm is at most max_norm.
inline double clip_grad_norm(RceParams& params, double max_norm) {
  double sq = 0.0;
  auto named = params.named_tensors();
  for (auto& [name, t] : named)
    for (double gi : t->grad) sq += gi * gi;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& [name, t] : named)
      for (double& gi : t->grad) gi *= s;
  }
  return norm;
}

using EpochCallback =
    std::function<void(int epoch, const RceParams&, const EpochMetrics&)>;

struct TrainResult {
  RceParams params;
  std::vector<EpochMetrics> metrics;
};

namespace detail {

inline void fisher_yates(std::vector<int>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = rng.index(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace detail

// Minibatch training of the full model on a set of transition triples.
//
// Reproducibility: parameter init, shuffling, and the reparameterization
// draws all come from streams derived from cfg.seed, noise draws are made in
// batch order before gradient work is dispatched, and per-worker gradient
// buffers are reduced in a fixed order. Two runs with the same config produce
// bit-identical parameters.
inline TrainResult train(const std::vector<ObservationTriple>& data,
                         const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: dataset is empty");
  const NetConfig& net = cfg.net;
  for (const ObservationTriple& t : data)
    if (t.x_t.size() != static_cast<std::size_t>(net.n_x) ||
        t.x_next.size() != static_cast<std::size_t>(net.n_x) ||
        t.u.size() != static_cast<std::size_t>(net.n_u))
      throw ConfigError("train: dataset dimensions do not match the model");

  TrainResult res{RceParams::init(net, derive_seed(cfg.seed, 0)), {}};
  RceParams& params = res.params;
  AdamState adam = AdamState::for_params(params);
  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  Rng eps_rng(derive_seed(cfg.seed, 2));

  auto named = params.named_tensors();
  const int n = static_cast<int>(data.size());
  const int nz = net.n_z;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  const int workers = cfg.workers;
  // Per-worker gradient accumulators, one flat buffer per parameter tensor.
  std::vector<std::vector<std::vector<double>>> wgrad(
      static_cast<std::size_t>(workers));
  for (auto& bufs : wgrad)
    for (auto& [name, t] : named) bufs.emplace_back(t->size(), 0.0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    detail::fisher_yates(order, shuffle_rng);
    auto [w_kl, w_logp] = cfg.weights.at_epoch(epoch);

    LossTerms epoch_sums;
    int batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    for (int b = 0; b < batches; ++b) {
      int lo = b * cfg.batch_size;
      int hi = std::min(n, lo + cfg.batch_size);
      int bs = hi - lo;

      // Reparameterization noise, drawn in batch order up front so the draw
      // sequence does not depend on worker scheduling.
      std::vector<double> eps(static_cast<std::size_t>(bs) * 2 * nz);
      for (double& e : eps) e = eps_rng.normal();

      std::vector<LossTerms> sample_terms(static_cast<std::size_t>(bs));
      std::exception_ptr failure;
      std::atomic<bool> failed{false};

      auto run_range = [&](int wi, int s_lo, int s_hi) {
        try {
          auto& bufs = wgrad[static_cast<std::size_t>(wi)];
          for (auto& buf : bufs) std::fill(buf.begin(), buf.end(), 0.0);
          for (int s = s_lo; s < s_hi; ++s) {
            if (failed.load(std::memory_order_relaxed)) return;
            const ObservationTriple& tr =
                data[static_cast<std::size_t>(order[static_cast<std::size_t>(lo + s)])];
            std::span<const double> e1{eps.data() + static_cast<std::size_t>(s) * 2 * nz,
                                       static_cast<std::size_t>(nz)};
            std::span<const double> e2{e1.data() + nz, static_cast<std::size_t>(nz)};
            Tape tape;
            ModelTape mt(tape, params, bufs);
            LossNodes ln = rce_loss(tape, mt, tr.x_t, tr.u, tr.x_next, e1, e2,
                                    w_kl, w_logp);
            tape.backward(ln.loss);
            sample_terms[static_cast<std::size_t>(s)] = ln.terms;
          }
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      };

      // Contiguous sample ranges per worker; worker w always owns range w,
      // so the reduction order below is independent of thread timing.
      int active = std::min(workers, bs);
      std::vector<std::pair<int, int>> ranges;
      for (int wi = 0; wi < active; ++wi) {
        int s_lo = bs * wi / active;
        int s_hi = bs * (wi + 1) / active;
        ranges.emplace_back(s_lo, s_hi);
      }
      if (active == 1) {
        run_range(0, 0, bs);
      } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(active));
        for (int wi = 0; wi < active; ++wi)
          pool.emplace_back(run_range, wi, ranges[static_cast<std::size_t>(wi)].first,
                            ranges[static_cast<std::size_t>(wi)].second);
        for (std::thread& th : pool) th.join();
      }
      if (failure) {
        try {
          std::rethrow_exception(failure);
        } catch (const std::exception& e) {
          throw NumericError("train: epoch " + std::to_string(epoch) +
                             " batch " + std::to_string(b) + ": " + e.what());
        }
      }

      // Reduce worker buffers in worker order, then average over the batch.
      for (auto& [name, t] : named) t->ensure_grad();
      double inv = 1.0 / static_cast<double>(bs);
      for (std::size_t k = 0; k < named.size(); ++k) {
        std::vector<double>& g = named[k].second->grad;
        std::fill(g.begin(), g.end(), 0.0);
        for (int wi = 0; wi < active; ++wi) {
          const std::vector<double>& buf = wgrad[static_cast<std::size_t>(wi)][k];
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += buf[i];
        }
        for (double& gi : g) gi *= inv;
      }
      clip_grad_norm(params, cfg.grad_clip_norm);
      adam_step(params, adam, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps);

      for (const LossTerms& t : sample_terms) {
        epoch_sums.total += t.total;
        epoch_sums.bce += t.bce;
        epoch_sums.kl += t.kl;
        epoch_sums.entropy += t.entropy;
        epoch_sums.logp += t.logp;
      }
    }

    EpochMetrics em;
    em.epoch = epoch;
    double inv_n = 1.0 / static_cast<double>(n);
    em.mean_loss = epoch_sums.total * inv_n;
    em.bce = epoch_sums.bce * inv_n;
    em.kl = epoch_sums.kl * inv_n;
    em.entropy = epoch_sums.entropy * inv_n;
    em.logp = epoch_sums.logp * inv_n;
    em.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.metrics.push_back(em);
    if (on_epoch) on_epoch(epoch, params, em);
  }
  return res;
}

}  // namespace rce
