#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "rce/common.hpp"
#include "rce/distributions.hpp"
#include "rce/rng.hpp"
#include "rce/tensor.hpp"

namespace rce {

// Layer widths of the four networks. Defaults are the sizes used for the
// planar task: 40x40 images, 2-d latent, 2-d action.
struct NetConfig {
  int n_x = 1600;
  int n_z = 2;
  int n_u = 2;
  int enc_h1 = 300, enc_h2 = 300;        // encoder hidden widths
  int dec_h1 = 300, dec_h2 = 300;        // decoder hidden widths
  int be_hx = 100, be_hz = 5, be_hm = 100;  // backward encoder branch widths
  int lin_h1 = 20, lin_h2 = 20;          // linearization hidden widths

  int enc_out() const { return 2 * n_z; }
  // w, r, c (n_z each) plus row-major B (n_z * n_u).
  int lin_out() const { return 3 * n_z + n_z * n_u; }

  void validate() const {
    for (int d : {n_x, n_z, n_u, enc_h1, enc_h2, dec_h1, dec_h2, be_hx, be_hz,
                  be_hm, lin_h1, lin_h2})
      if (d <= 0) throw ConfigError("NetConfig: all widths must be positive");
  }

  bool operator==(const NetConfig&) const = default;
};

struct Dense {
  Tensor w;  // (out x in)
  Tensor b;  // (out)
};

// All trainable parameters. Layout:
//   encoder        x (n_x) -> h1 -> h2 -> [mean | log_var] (2 n_z), relu hidden
//   backward       x-branch n_x -> be_hx, z-branch n_z -> be_hz, both relu,
//                  concat -> be_hm (relu) -> [mean | log_var]
//   linearization  [z | u] -> lin_h1 -> lin_h2 -> [w | r | B | c], relu hidden
//   decoder        z -> h1 -> h2 -> logits (n_x), relu hidden
struct RceParams {
  NetConfig net;
  std::array<Dense, 3> encoder;
  Dense back_x, back_z, back_merge, back_head;
  std::array<Dense, 3> linearization;
  std::array<Dense, 3> decoder;

  // Glorot-uniform weights, zero biases, drawn in canonical parameter order.
  static RceParams init(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    RceParams p;
    p.net = cfg;
    p.encoder[0] = make_dense(cfg.enc_h1, cfg.n_x);
    p.encoder[1] = make_dense(cfg.enc_h2, cfg.enc_h1);
    p.encoder[2] = make_dense(cfg.enc_out(), cfg.enc_h2);
    p.back_x = make_dense(cfg.be_hx, cfg.n_x);
    p.back_z = make_dense(cfg.be_hz, cfg.n_z);
    p.back_merge = make_dense(cfg.be_hm, cfg.be_hx + cfg.be_hz);
    p.back_head = make_dense(cfg.enc_out(), cfg.be_hm);
    p.linearization[0] = make_dense(cfg.lin_h1, cfg.n_z + cfg.n_u);
    p.linearization[1] = make_dense(cfg.lin_h2, cfg.lin_h1);
    p.linearization[2] = make_dense(cfg.lin_out(), cfg.lin_h2);
    p.decoder[0] = make_dense(cfg.dec_h1, cfg.n_z);
    p.decoder[1] = make_dense(cfg.dec_h2, cfg.dec_h1);
    p.decoder[2] = make_dense(cfg.n_x, cfg.dec_h2);
    Rng rng(seed);
    for (auto& [name, t] : p.named_tensors()) {
      if (name.ends_with(".w")) glorot_fill(*t, rng);
      // biases stay zero
    }
    return p;
  }

  // Canonical (name, tensor) list; the order fixes initialization draws,
  // checkpoint layout, and gradient reduction.
  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add = [&out](const std::string& name, Dense& d) {
      out.emplace_back(name + ".w", &d.w);
      out.emplace_back(name + ".b", &d.b);
    };
    for (int i = 0; i < 3; ++i) add("encoder." + std::to_string(i), encoder[i]);
    add("backward.x", back_x);
    add("backward.z", back_z);
    add("backward.merge", back_merge);
    add("backward.head", back_head);
    for (int i = 0; i < 3; ++i)
      add("linearization." + std::to_string(i), linearization[i]);
    for (int i = 0; i < 3; ++i) add("decoder." + std::to_string(i), decoder[i]);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const {
    auto mut = const_cast<RceParams*>(this)->named_tensors();
    return {mut.begin(), mut.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_tensors()) n += t->size();
    return n;
  }

 private:
  static Dense make_dense(int out, int in) {
    Dense d;
    d.w = Tensor::matrix(out, in);
    d.b = Tensor::vector(out);
    return d;
  }

  static void glorot_fill(Tensor& w, Rng& rng) {
    double fan_in = w.cols();
    double fan_out = w.rows();
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : w.data) v = rng.uniform(-limit, limit);
  }
};

// One local linearization of the latent dynamics around a (z, u) pair:
//   forward   z' = A z + B u + c      with A = M^-1
//   reverse   z  = M (z' - B u - c)   with M = I + w r^T, w >= 0, r >= 0
// M has determinant 1 + r^T w >= 1, so it is always invertible and A follows
// from the Sherman-Morrison identity: A = I - w r^T / (1 + r^T w).
struct LocalLinearDynamics {
  std::vector<double> w;
  std::vector<double> r;
  Tensor M;  // (n_z x n_z)
  Tensor B;  // (n_z x n_u)
  std::vector<double> c;

  LocalLinearDynamics() = default;

  LocalLinearDynamics(std::vector<double> w_in, std::vector<double> r_in,
                      Tensor B_in, std::vector<double> c_in)
      : w(std::move(w_in)), r(std::move(r_in)), B(std::move(B_in)), c(std::move(c_in)) {
    int nz = static_cast<int>(w.size());
    if (r.size() != w.size() || c.size() != w.size() || B.rows() != nz)
      throw DimensionError("LocalLinearDynamics: inconsistent sizes");
    for (int i = 0; i < nz; ++i)
      if (w[i] < 0.0 || r[i] < 0.0)
        throw DomainError("LocalLinearDynamics: w and r must be nonnegative");
    M = Tensor::matrix(nz, nz);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < nz; ++j)
        M.at(i, j) = (i == j ? 1.0 : 0.0) + w[i] * r[j];
  }

  int n_z() const { return static_cast<int>(w.size()); }
  int n_u() const { return B.cols(); }

  double det_M() const {
    double acc = 1.0;
    for (std::size_t i = 0; i < r.size(); ++i) acc += r[i] * w[i];
    return acc;
  }

  // A = M^-1 via Sherman-Morrison.
  Tensor A() const {
    int nz = n_z();
    double denom = det_M();
    Tensor a = Tensor::matrix(nz, nz);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < nz; ++j)
        a.at(i, j) = (i == j ? 1.0 : 0.0) - w[i] * r[j] / denom;
    return a;
  }
};

// z = M (z' - B u - c)
inline std::vector<double> reverse_transition(const LocalLinearDynamics& d,
                                              std::span<const double> z_next,
                                              std::span<const double> u) {
  int nz = d.n_z();
  if (z_next.size() != static_cast<std::size_t>(nz) ||
      u.size() != static_cast<std::size_t>(d.n_u()))
    throw DimensionError("reverse_transition: size mismatch");
  std::vector<double> v(static_cast<std::size_t>(nz));
  for (int i = 0; i < nz; ++i) {
    double bu = 0.0;
    for (int j = 0; j < d.n_u(); ++j) bu += d.B.at(i, j) * u[j];
    v[i] = z_next[i] - bu - d.c[i];
  }
  double rv = 0.0;
  for (int i = 0; i < nz; ++i) rv += d.r[i] * v[i];
  std::vector<double> z(static_cast<std::size_t>(nz));
  for (int i = 0; i < nz; ++i) z[i] = v[i] + d.w[i] * rv;
  return z;
}

// z' = A z + B u + c with A = I - w r^T / (1 + r^T w)
inline std::vector<double> forward_transition(const LocalLinearDynamics& d,
                                              std::span<const double> z,
                                              std::span<const double> u) {
  int nz = d.n_z();
  if (z.size() != static_cast<std::size_t>(nz) ||
      u.size() != static_cast<std::size_t>(d.n_u()))
    throw DimensionError("forward_transition: size mismatch");
  double rz = 0.0;
  for (int i = 0; i < nz; ++i) rz += d.r[i] * z[i];
  double coef = rz / d.det_M();
  std::vector<double> out(static_cast<std::size_t>(nz));
  for (int i = 0; i < nz; ++i) {
    double bu = 0.0;
    for (int j = 0; j < d.n_u(); ++j) bu += d.B.at(i, j) * u[j];
    out[i] = z[i] - d.w[i] * coef + bu + d.c[i];
  }
  return out;
}

// Builds the four networks on a tape with the parameters registered as
// leaves, so one backward() yields all parameter gradients. Leaf ids follow
// the canonical parameter order.
class ModelTape {
 public:
  struct DynNodes {
    Tape::Id w, r, B, c;
  };

  // With `grad_sinks` (one buffer per parameter, canonical order) the
  // parameters become sink leaves: backward() adds their gradients into the
  // buffers instead of tape storage. Otherwise read gradients per leaf id.
  ModelTape(Tape& tape, const RceParams& params,
            std::span<std::vector<double>> grad_sinks = {})
      : tape_(&tape), params_(&params) {
    auto named = params.named_tensors();
    if (!grad_sinks.empty() && grad_sinks.size() != named.size())
      throw DimensionError("ModelTape: expected one gradient sink per parameter");
    leaf_ids_.reserve(named.size());
    for (std::size_t i = 0; i < named.size(); ++i) {
      const Tensor& t = *named[i].second;
      leaf_ids_.push_back(grad_sinks.empty()
                              ? tape.leaf(t)
                              : tape.leaf_sink(t, grad_sinks[i]));
    }
    // Leaf order mirrors named_tensors(): (w, b) pairs per layer.
    std::size_t k = 0;
    auto next = [this, &k]() {
      Tape::Id w = leaf_ids_[k++];
      Tape::Id b = leaf_ids_[k++];
      return std::pair<Tape::Id, Tape::Id>{w, b};
    };
    for (auto& l : enc_) std::tie(l.w, l.b) = next();
    std::tie(bx_.w, bx_.b) = next();
    std::tie(bz_.w, bz_.b) = next();
    std::tie(bm_.w, bm_.b) = next();
    std::tie(bh_.w, bh_.b) = next();
    for (auto& l : lin_) std::tie(l.w, l.b) = next();
    for (auto& l : dec_) std::tie(l.w, l.b) = next();
  }

  const NetConfig& net() const { return params_->net; }
  std::span<const Tape::Id> leaf_ids() const { return leaf_ids_; }

  // q(z | x): mean and clamped log variance.
  GaussNodes encode(Tape::Id x) const {
    check_rows(x, net().n_x, "encode");
    std::array<LayerIds, 3> layers = {
        LayerIds{enc_[0].w, enc_[0].b, Activation::kRelu},
        LayerIds{enc_[1].w, enc_[1].b, Activation::kRelu},
        LayerIds{enc_[2].w, enc_[2].b, Activation::kIdentity}};
    return split_gauss(mlp_forward(*tape_, layers, x));
  }

  // q(z_bar | x_t, z_next): two relu branches, concat, relu merge, head.
  GaussNodes backward_encode(Tape::Id x, Tape::Id z_next) const {
    check_rows(x, net().n_x, "backward_encode");
    check_rows(z_next, net().n_z, "backward_encode");
    Tape::Id hx = tape_->relu(tape_->affine(bx_.w, x, bx_.b));
    Tape::Id hz = tape_->relu(tape_->affine(bz_.w, z_next, bz_.b));
    Tape::Id hm = tape_->relu(tape_->affine(bm_.w, tape_->concat(hx, hz), bm_.b));
    return split_gauss(tape_->affine(bh_.w, hm, bh_.b));
  }

  // Local dynamics at (z, u). w and r pass through softplus so M = I + w r^T
  // is always invertible.
  DynNodes linearize(Tape::Id z, Tape::Id u) const {
    check_rows(z, net().n_z, "linearize");
    check_rows(u, net().n_u, "linearize");
    std::array<LayerIds, 3> layers = {
        LayerIds{lin_[0].w, lin_[0].b, Activation::kRelu},
        LayerIds{lin_[1].w, lin_[1].b, Activation::kRelu},
        LayerIds{lin_[2].w, lin_[2].b, Activation::kIdentity}};
    Tape::Id h = mlp_forward(*tape_, layers, tape_->concat(z, u));
    int nz = net().n_z, nu = net().n_u;
    DynNodes d;
    d.w = tape_->softplus(tape_->slice(h, 0, nz));
    d.r = tape_->softplus(tape_->slice(h, nz, nz));
    d.B = tape_->reshape(tape_->slice(h, 2 * nz, nz * nu), nz, nu);
    d.c = tape_->slice(h, 2 * nz + nz * nu, nz);
    return d;
  }

  // z = M (z' - B u - c) = v + w (r . v)
  Tape::Id reverse_transition(const DynNodes& d, Tape::Id z_next,
                              Tape::Id u) const {
    Tape::Id v = tape_->sub(tape_->sub(z_next, tape_->matmul(d.B, u)), d.c);
    Tape::Id rv = tape_->sum(tape_->mul(d.r, v));
    return tape_->add(v, tape_->mul(d.w, rv));
  }

  // z' = z - w (r . z) / (1 + r . w) + B u + c
  Tape::Id forward_transition(const DynNodes& d, Tape::Id z, Tape::Id u) const {
    Tape::Id rz = tape_->sum(tape_->mul(d.r, z));
    Tape::Id denom = tape_->add_scalar(tape_->sum(tape_->mul(d.r, d.w)), 1.0);
    Tape::Id coef = tape_->div(rz, denom);
    Tape::Id az = tape_->sub(z, tape_->mul(d.w, coef));
    return tape_->add(tape_->add(az, tape_->matmul(d.B, u)), d.c);
  }

  // p(x | z) pixel logits.
  Tape::Id decode(Tape::Id z) const {
    check_rows(z, net().n_z, "decode");
    std::array<LayerIds, 3> layers = {
        LayerIds{dec_[0].w, dec_[0].b, Activation::kRelu},
        LayerIds{dec_[1].w, dec_[1].b, Activation::kRelu},
        LayerIds{dec_[2].w, dec_[2].b, Activation::kIdentity}};
    return mlp_forward(*tape_, layers, z);
  }

 private:
  struct Pair {
    Tape::Id w = -1, b = -1;
  };

  Tape* tape_;
  const RceParams* params_;
  std::vector<Tape::Id> leaf_ids_;
  std::array<Pair, 3> enc_;
  Pair bx_, bz_, bm_, bh_;
  std::array<Pair, 3> lin_;
  std::array<Pair, 3> dec_;

  void check_rows(Tape::Id id, int want, const char* where) const {
    if (tape_->rows(id) != want || tape_->cols(id) != 1)
      throw DimensionError(std::string("ModelTape::") + where +
                           ": expected column vector of length " +
                           std::to_string(want));
  }

  GaussNodes split_gauss(Tape::Id h) const {
    int nz = net().n_z;
    GaussNodes g;
    g.mean = tape_->slice(h, 0, nz);
    g.log_var = tape_->clamp(tape_->slice(h, nz, nz), kLogVarMin, kLogVarMax);
    return g;
  }
};

namespace detail {
inline std::vector<double> to_vec(std::span<const double> s) {
  return {s.begin(), s.end()};
}
}  // namespace detail

// ---- plain (gradient-free) forward passes ----
// These run a scratch tape so there is exactly one implementation of each
// network.

inline DiagGaussian encode(const RceParams& p, std::span<const double> x) {
  Tape t;
  ModelTape mt(t, p);
  GaussNodes g = mt.encode(t.constant_vector(x));
  return DiagGaussian(detail::to_vec(t.value(g.mean)),
                      detail::to_vec(t.value(g.log_var)));
}

inline DiagGaussian backward_encode(const RceParams& p,
                                    std::span<const double> x,
                                    std::span<const double> z_next) {
  Tape t;
  ModelTape mt(t, p);
  GaussNodes g =
      mt.backward_encode(t.constant_vector(x), t.constant_vector(z_next));
  return DiagGaussian(detail::to_vec(t.value(g.mean)),
                      detail::to_vec(t.value(g.log_var)));
}

inline LocalLinearDynamics linearize(const RceParams& p,
                                     std::span<const double> z,
                                     std::span<const double> u) {
  Tape t;
  ModelTape mt(t, p);
  ModelTape::DynNodes d =
      mt.linearize(t.constant_vector(z), t.constant_vector(u));
  Tensor B = Tensor::from({p.net.n_z, p.net.n_u}, detail::to_vec(t.value(d.B)));
  return LocalLinearDynamics(detail::to_vec(t.value(d.w)),
                             detail::to_vec(t.value(d.r)), std::move(B),
                             detail::to_vec(t.value(d.c)));
}

inline std::vector<double> decode_logits(const RceParams& p,
                                         std::span<const double> z) {
  Tape t;
  ModelTape mt(t, p);
  return detail::to_vec(t.value(mt.decode(t.constant_vector(z))));
}

// What the planner and the evaluation metrics need from a trained model.
// Virtual so tests can substitute hand-built dynamics.
class PixelModel {
 public:
  virtual ~PixelModel() = default;
  virtual int latent_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual std::vector<double> encode_mean(std::span<const double> x) const = 0;
  virtual std::vector<double> decode(std::span<const double> z) const = 0;
  virtual LocalLinearDynamics linearize_at(std::span<const double> z,
                                           std::span<const double> u) const = 0;
};

class RceModelView final : public PixelModel {
 public:
  explicit RceModelView(const RceParams& p) : p_(&p) {}
  int latent_dim() const override { return p_->net.n_z; }
  int action_dim() const override { return p_->net.n_u; }
  std::vector<double> encode_mean(std::span<const double> x) const override {
    return rce::encode(*p_, x).mean;
  }
  std::vector<double> decode(std::span<const double> z) const override {
    return decode_logits(*p_, z);
  }
  LocalLinearDynamics linearize_at(std::span<const double> z,
                                   std::span<const double> u) const override {
    return rce::linearize(*p_, z, u);
  }

 private:
  const RceParams* p_;
};

}  // namespace rce
