#pragma once

#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rce/common.hpp"

namespace rce {

// Dense row-major array of doubles with an optional gradient buffer of the
// same size. Rank is 1 (column vector, shape {n}) or 2 (shape {rows, cols}).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until ensure_grad()

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(checked_size(shape), 0.0);
  }

  static Tensor vector(int n) { return Tensor({n}); }
  static Tensor matrix(int rows, int cols) { return Tensor({rows, cols}); }

  static Tensor from(std::vector<int> s, std::vector<double> d) {
    Tensor t;
    if (checked_size(s) != d.size())
      throw DimensionError("Tensor::from: data length does not match shape");
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }

  std::size_t size() const { return data.size(); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() {
    for (double& g : grad) g = 0.0;
  }

  static std::size_t checked_size(const std::vector<int>& s) {
    if (s.empty() || s.size() > 2)
      throw DimensionError("Tensor: rank must be 1 or 2");
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw DimensionError("Tensor: dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }
};

// Reverse-mode autodiff tape over matrices of doubles.
//
// Usage: register parameter Tensors as leaves, build the computation with
// the op methods (each returns a node Id), call backward() on a scalar node,
// then read per-leaf gradients with grad(). Values are computed eagerly at
// node creation; gradients are accumulated in one reverse sweep over the
// nodes in fixed order, so results are reproducible bit for bit.
//
// leaf() keeps the gradient on the tape; leaf_sink() adds it into an external
// buffer instead, which lets a training loop accumulate per-sample gradients
// across many short-lived tapes without intermediate copies. Sink buffers are
// never cleared by the tape.
//
// Constants do not receive gradients, and no gradient work is done for
// subgraphs that reach no leaf.
//
// Shape discipline: every elementwise binary op requires equal shapes or a
// scalar (1x1) on one side. Nothing else broadcasts.
class Tape {
 public:
  using Id = std::int32_t;

  // ---- node creation: inputs ----

  // References external storage; `t` must outlive the tape and must not be
  // resized while the tape is alive.
  Id leaf(const Tensor& t) {
    Node n;
    n.op = Op::kLeaf;
    n.r = t.rows();
    n.c = t.cols();
    n.val = t.data.data();
    n.needs = true;
    return push(std::move(n));
  }

  // Like leaf(), but backward() accumulates d(loss)/d(t) into `grad_sink`
  // (size must match) instead of tape-owned storage.
  Id leaf_sink(const Tensor& t, std::span<double> grad_sink) {
    if (grad_sink.size() != t.size())
      throw DimensionError("Tape::leaf_sink: sink size does not match tensor");
    Node n;
    n.op = Op::kLeaf;
    n.r = t.rows();
    n.c = t.cols();
    n.val = t.data.data();
    n.needs = true;
    n.ext_grad = grad_sink.data();
    return push(std::move(n));
  }

  Id constant(int rows, int cols, std::vector<double> v) {
    if (rows <= 0 || cols <= 0 ||
        v.size() != static_cast<std::size_t>(rows) * cols)
      throw DimensionError("Tape::constant: data length does not match shape");
    Node n;
    n.op = Op::kConst;
    n.r = rows;
    n.c = cols;
    n.owned = std::move(v);
    return push(std::move(n));
  }

  Id constant_vector(std::span<const double> v) {
    return constant(static_cast<int>(v.size()), 1, {v.begin(), v.end()});
  }

  Id constant_scalar(double v) { return constant(1, 1, {v}); }

  // ---- node introspection ----

  int rows(Id id) const { return node(id).r; }
  int cols(Id id) const { return node(id).c; }
  std::size_t count(Id id) const {
    const Node& n = node(id);
    return static_cast<std::size_t>(n.r) * n.c;
  }
  std::size_t node_count() const { return nodes_.size(); }

  std::span<const double> value(Id id) const {
    const Node& n = node(id);
    return {n.val, static_cast<std::size_t>(n.r) * n.c};
  }

  double value_scalar(Id id) const {
    const Node& n = node(id);
    if (n.r != 1 || n.c != 1)
      throw ContractError("Tape::value_scalar: node is not 1x1");
    return n.val[0];
  }

  // Gradient of the last backward() target w.r.t. node `id`. Empty span if
  // the node did not contribute.
  std::span<const double> grad(Id id) const {
    const Node& n = node(id);
    if (n.ext_grad)
      return {n.ext_grad, static_cast<std::size_t>(n.r) * n.c};
    return {n.grad.data(), n.grad.size()};
  }

  // ---- ops ----

  Id matmul(Id a, Id b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.c != nb.r) throw DimensionError(shape_msg("matmul", na, nb));
    int m = na.r, k = na.c, n = nb.c;
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* A = na.val;
    const double* B = nb.val;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p)
          acc += A[static_cast<std::size_t>(i) * k + p] *
                 B[static_cast<std::size_t>(p) * n + j];
        out[static_cast<std::size_t>(i) * n + j] = acc;
      }
    return push_op(Op::kMatMul, m, n, a, b, std::move(out));
  }

  // Fused w*x + b for a column vector x. Produces the same bits as
  // add(matmul(w, x), b): terms are summed in index order and exact zeros in
  // x contribute nothing to an IEEE sum, so they are skipped when x is
  // sparse (binary images, relu outputs).
  Id affine(Id w, Id x, Id b) {
    const Node& nw = node(w);
    const Node& nx = node(x);
    const Node& nb = node(b);
    if (nx.c != 1 || nb.c != 1 || nw.c != nx.r || nw.r != nb.r)
      throw DimensionError(shape_msg("affine", nw, nx) + " bias " +
                           shape_str(nb));
    int m = nw.r, k = nw.c;
    const double* W = nw.val;
    const double* X = nx.val;
    const double* Bv = nb.val;

    // Indices of nonzero input entries, reused across rows.
    std::vector<int>& nzi = scratch_idx_;
    nzi.clear();
    for (int p = 0; p < k; ++p)
      if (X[p] != 0.0) nzi.push_back(p);

    std::vector<double> out(static_cast<std::size_t>(m));
    bool sparse = nzi.size() * 4 < static_cast<std::size_t>(k);
    for (int i = 0; i < m; ++i) {
      const double* row = W + static_cast<std::size_t>(i) * k;
      double acc = 0.0;
      if (sparse) {
        for (int p : nzi) acc += row[p] * X[p];
      } else {
        for (int p = 0; p < k; ++p) acc += row[p] * X[p];
      }
      out[static_cast<std::size_t>(i)] = acc + Bv[i];
    }
    Node n;
    n.op = Op::kAffine;
    n.r = m;
    n.c = 1;
    n.a = w;
    n.b = x;
    n.c2 = b;
    n.needs = nw.needs || nx.needs || nb.needs;
    n.owned = std::move(out);
    return push(std::move(n));
  }

  Id add(Id a, Id b) { return ew_binary(Op::kAdd, a, b); }
  Id sub(Id a, Id b) { return ew_binary(Op::kSub, a, b); }
  Id mul(Id a, Id b) { return ew_binary(Op::kMul, a, b); }

  Id div(Id a, Id b) {
    for (double x : value(b))
      if (x == 0.0) throw DomainError("Tape::div: division by zero");
    return ew_binary(Op::kDiv, a, b);
  }

  Id scale(Id a, double s) {
    const Node& na = node(a);
    std::vector<double> out(count(a));
    const double* A = na.val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * A[i];
    Id id = push_op(Op::kScale, na.r, na.c, a, -1, std::move(out));
    nodes_[id].s0 = s;
    return id;
  }

  Id add_scalar(Id a, double s) {
    const Node& na = node(a);
    std::vector<double> out(count(a));
    const double* A = na.val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + s;
    return push_op(Op::kAddScalar, na.r, na.c, a, -1, std::move(out));
  }

  Id neg(Id a) { return unary(Op::kNeg, a, [](double x) { return -x; }); }

  Id sigmoid(Id a) {
    return unary(Op::kSigmoid, a, [](double x) { return stable_sigmoid(x); });
  }

  Id relu(Id a) {
    return unary(Op::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; });
  }

  Id softplus(Id a) {
    return unary(Op::kSoftplus, a,
                 [](double x) { return stable_softplus(x); });
  }

  Id exp(Id a) {
    return unary(Op::kExp, a, [](double x) { return std::exp(x); });
  }

  Id log(Id a) {
    for (double x : value(a))
      if (x <= 0.0) throw DomainError("Tape::log: input must be positive");
    return unary(Op::kLog, a, [](double x) { return std::log(x); });
  }

  Id clamp(Id a, double lo, double hi) {
    if (!(lo <= hi)) throw DomainError("Tape::clamp: lo must not exceed hi");
    const Node& na = node(a);
    std::vector<double> out(count(a));
    const double* A = na.val;
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = A[i] < lo ? lo : (A[i] > hi ? hi : A[i]);
    Id id = push_op(Op::kClamp, na.r, na.c, a, -1, std::move(out));
    nodes_[id].s0 = lo;
    nodes_[id].s1 = hi;
    return id;
  }

  Id sum(Id a) {
    double acc = 0.0;
    for (double x : value(a)) acc += x;
    return push_op(Op::kSum, 1, 1, a, -1, {acc});
  }

  // Stack two column vectors.
  Id concat(Id a, Id b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.c != 1 || nb.c != 1)
      throw DimensionError(shape_msg("concat (column vectors only)", na, nb));
    std::vector<double> out;
    out.reserve(count(a) + count(b));
    out.insert(out.end(), na.val, na.val + na.r);
    out.insert(out.end(), nb.val, nb.val + nb.r);
    return push_op(Op::kConcat, na.r + nb.r, 1, a, b, std::move(out));
  }

  // Contiguous range of a column vector.
  Id slice(Id a, int offset, int len) {
    const Node& na = node(a);
    if (na.c != 1)
      throw DimensionError("Tape::slice: input must be a column vector");
    if (offset < 0 || len <= 0 || offset + len > na.r)
      throw DimensionError("Tape::slice: range [" + std::to_string(offset) +
                           ", " + std::to_string(offset + len) +
                           ") outside vector of length " + std::to_string(na.r));
    std::vector<double> out(na.val + offset, na.val + offset + len);
    Id id = push_op(Op::kSlice, len, 1, a, -1, std::move(out));
    nodes_[id].i0 = offset;
    return id;
  }

  Id reshape(Id a, int rows, int cols) {
    const Node& na = node(a);
    if (rows <= 0 || cols <= 0 ||
        static_cast<std::size_t>(rows) * cols != count(a))
      throw DimensionError("Tape::reshape: element count changes");
    std::vector<double> out(na.val, na.val + count(a));
    return push_op(Op::kReshape, rows, cols, a, -1, std::move(out));
  }

  // ---- reverse sweep ----

  // Accumulates d(loss)/d(node) for every node between `loss` and the
  // leaves. Tape-owned gradients from a previous sweep are reset; external
  // sinks keep accumulating.
  void backward(Id loss) {
    const Node& nl = node(loss);
    if (nl.r != 1 || nl.c != 1)
      throw ContractError("Tape::backward: target must be scalar");
    for (Node& n : nodes_) n.grad.clear();
    g(loss)[0] += 1.0;
    for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty() && !n.ext_grad) continue;
      backprop(n);
    }
  }

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kConst,
    kMatMul,
    kAffine,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kScale,
    kAddScalar,
    kNeg,
    kSigmoid,
    kRelu,
    kSoftplus,
    kExp,
    kLog,
    kClamp,
    kSum,
    kConcat,
    kSlice,
    kReshape,
  };

  struct Node {
    Op op = Op::kConst;
    int r = 0, c = 0;
    Id a = -1, b = -1, c2 = -1;
    double s0 = 0.0, s1 = 0.0;
    int i0 = 0;
    bool needs = false;           // reaches a leaf
    const double* val = nullptr;  // owned.data() or external leaf storage
    double* ext_grad = nullptr;   // leaf_sink target
    std::vector<double> owned;
    std::vector<double> grad;  // lazily allocated during backward
  };

  std::vector<Node> nodes_;
  std::vector<int> scratch_idx_;

  const Node& node(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw ContractError("Tape: invalid node id");
    return nodes_[static_cast<std::size_t>(id)];
  }

  bool needs_grad(Id id) const {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs;
  }

  Id push(Node&& n) {
    nodes_.push_back(std::move(n));
    Node& stored = nodes_.back();
    if (!stored.owned.empty()) stored.val = stored.owned.data();
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id push_op(Op op, int r, int c, Id a, Id b, std::vector<double> v) {
    Node n;
    n.op = op;
    n.r = r;
    n.c = c;
    n.a = a;
    n.b = b;
    n.needs = needs_grad(a) || needs_grad(b);
    n.owned = std::move(v);
    return push(std::move(n));
  }

  template <typename F>
  Id unary(Op op, Id a, F f) {
    const Node& na = node(a);
    std::vector<double> out(count(a));
    const double* A = na.val;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i]);
    return push_op(op, na.r, na.c, a, -1, std::move(out));
  }

  static bool is_scalar(const Node& n) { return n.r == 1 && n.c == 1; }

  Id ew_binary(Op op, Id a, Id b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    bool same = na.r == nb.r && na.c == nb.c;
    if (!same && !is_scalar(na) && !is_scalar(nb))
      throw DimensionError(shape_msg(op_name(op), na, nb));
    const Node& shape_src = is_scalar(na) ? nb : na;
    std::size_t n = static_cast<std::size_t>(shape_src.r) * shape_src.c;
    std::vector<double> out(n);
    const double* A = na.val;
    const double* B = nb.val;
    bool sa = is_scalar(na) && !same;
    bool sb = is_scalar(nb) && !same;
    for (std::size_t i = 0; i < n; ++i) {
      double x = sa ? A[0] : A[i];
      double y = sb ? B[0] : B[i];
      double z = 0.0;
      switch (op) {
        case Op::kAdd: z = x + y; break;
        case Op::kSub: z = x - y; break;
        case Op::kMul: z = x * y; break;
        case Op::kDiv: z = x / y; break;
        default: throw ContractError("Tape: not an elementwise op");
      }
      out[i] = z;
    }
    return push_op(op, shape_src.r, shape_src.c, a, b, std::move(out));
  }

  // Gradient storage for node `id`, allocating tape-owned storage on first
  // touch unless the node has an external sink.
  std::span<double> g(Id id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    std::size_t sz = static_cast<std::size_t>(n.r) * n.c;
    if (n.ext_grad) return {n.ext_grad, sz};
    if (n.grad.empty()) n.grad.assign(sz, 0.0);
    return {n.grad.data(), n.grad.size()};
  }

  // Adds a transform of gy into the gradient of input `id`; reduces to a
  // scalar slot when the input was broadcast.
  void accum_ew(Id id, std::span<const double> gy, const double* other,
                bool other_scalar, int mode) {
    // mode 0: g += gy            (add / sub lhs)
    // mode 1: g -= gy            (sub rhs)
    // mode 2: g += gy * other    (mul)
    // mode 3: g += gy / other    (div lhs)
    if (!needs_grad(id)) return;
    std::span<double> gr = g(id);
    bool reduce = gr.size() == 1 && gy.size() > 1;
    for (std::size_t i = 0; i < gy.size(); ++i) {
      double o = other ? (other_scalar ? other[0] : other[i]) : 0.0;
      double contrib = 0.0;
      switch (mode) {
        case 0: contrib = gy[i]; break;
        case 1: contrib = -gy[i]; break;
        case 2: contrib = gy[i] * o; break;
        case 3: contrib = gy[i] / o; break;
      }
      gr[reduce ? 0 : i] += contrib;
    }
  }

  void backprop(Node& n) {
    std::span<const double> gy =
        n.ext_grad
            ? std::span<const double>{n.ext_grad,
                                      static_cast<std::size_t>(n.r) * n.c}
            : std::span<const double>{n.grad.data(), n.grad.size()};
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kMatMul: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        int m = na.r, k = na.c, c = nb.c;
        const double* A = na.val;
        const double* B = nb.val;
        if (needs_grad(n.a)) {
          std::span<double> ga = g(n.a);
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              double acc = 0.0;
              for (int j = 0; j < c; ++j)
                acc += gy[static_cast<std::size_t>(i) * c + j] *
                       B[static_cast<std::size_t>(p) * c + j];
              ga[static_cast<std::size_t>(i) * k + p] += acc;
            }
        }
        if (needs_grad(n.b)) {
          std::span<double> gb = g(n.b);
          for (int p = 0; p < k; ++p)
            for (int j = 0; j < c; ++j) {
              double acc = 0.0;
              for (int i = 0; i < m; ++i)
                acc += A[static_cast<std::size_t>(i) * k + p] *
                       gy[static_cast<std::size_t>(i) * c + j];
              gb[static_cast<std::size_t>(p) * c + j] += acc;
            }
        }
        break;
      }
      case Op::kAffine: {
        const Node& nw = nodes_[n.a];
        const Node& nx = nodes_[n.b];
        int m = nw.r, k = nw.c;
        const double* W = nw.val;
        const double* X = nx.val;
        bool need_w = needs_grad(n.a);
        bool need_x = needs_grad(n.b);
        bool need_b = needs_grad(n.c2);
        std::span<double> gw = need_w ? g(n.a) : std::span<double>{};
        std::span<double> gx = need_x ? g(n.b) : std::span<double>{};
        std::span<double> gb = need_b ? g(n.c2) : std::span<double>{};
        for (int i = 0; i < m; ++i) {
          double gi = gy[i];
          if (need_b) gb[i] += gi;
          // A zero output gradient contributes exact zeros below; skip it.
          if (gi == 0.0) continue;
          const double* row = W + static_cast<std::size_t>(i) * k;
          if (need_x) {
            for (int p = 0; p < k; ++p) gx[p] += gi * row[p];
          }
          if (need_w) {
            double* grow = gw.data() + static_cast<std::size_t>(i) * k;
            for (int p = 0; p < k; ++p) {
              // Skipping exact zeros leaves the IEEE result unchanged.
              double xp = X[p];
              if (xp != 0.0) grow[p] += gi * xp;
            }
          }
        }
        break;
      }
      case Op::kAdd:
        accum_ew(n.a, gy, nullptr, false, 0);
        accum_ew(n.b, gy, nullptr, false, 0);
        break;
      case Op::kSub:
        accum_ew(n.a, gy, nullptr, false, 0);
        accum_ew(n.b, gy, nullptr, false, 1);
        break;
      case Op::kMul: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        accum_ew(n.a, gy, nb.val, is_scalar(nb) && !is_scalar(n), 2);
        accum_ew(n.b, gy, na.val, is_scalar(na) && !is_scalar(n), 2);
        break;
      }
      case Op::kDiv: {
        // y = a / b: da = gy / b, db = -gy * y / b
        const Node& nb = nodes_[n.b];
        bool bs = is_scalar(nb) && !is_scalar(n);
        accum_ew(n.a, gy, nb.val, bs, 3);
        if (needs_grad(n.b)) {
          std::span<double> gb = g(n.b);
          bool reduce = gb.size() == 1 && gy.size() > 1;
          for (std::size_t i = 0; i < gy.size(); ++i) {
            double b = bs ? nb.val[0] : nb.val[i];
            gb[reduce ? 0 : i] -= gy[i] * n.val[i] / b;
          }
        }
        break;
      }
      case Op::kScale: {
        if (!needs_grad(n.a)) break;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += n.s0 * gy[i];
        break;
      }
      case Op::kAddScalar:
      case Op::kReshape: {
        if (!needs_grad(n.a)) break;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        break;
      }
      case Op::kNeg: {
        if (!needs_grad(n.a)) break;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] -= gy[i];
        break;
      }
      case Op::kSigmoid: {
        if (!needs_grad(n.a)) break;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i)
          ga[i] += gy[i] * n.val[i] * (1.0 - n.val[i]);
        break;
      }
      case Op::kRelu: {
        if (!needs_grad(n.a)) break;
        const double* x = nodes_[n.a].val;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i)
          if (x[i] > 0.0) ga[i] += gy[i];
        break;
      }
      case Op::kSoftplus: {
        if (!needs_grad(n.a)) break;
        const double* x = nodes_[n.a].val;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i)
          ga[i] += gy[i] * stable_sigmoid(x[i]);
        break;
      }
      case Op::kExp: {
        if (!needs_grad(n.a)) break;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.val[i];
        break;
      }
      case Op::kLog: {
        if (!needs_grad(n.a)) break;
        const double* x = nodes_[n.a].val;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / x[i];
        break;
      }
      case Op::kClamp: {
        // Gradient passes where the input was not clipped.
        if (!needs_grad(n.a)) break;
        const double* x = nodes_[n.a].val;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i)
          if (x[i] >= n.s0 && x[i] <= n.s1) ga[i] += gy[i];
        break;
      }
      case Op::kSum: {
        if (!needs_grad(n.a)) break;
        std::span<double> ga = g(n.a);
        for (double& v : ga) v += gy[0];
        break;
      }
      case Op::kConcat: {
        std::size_t na_size = count(n.a);
        if (needs_grad(n.a)) {
          std::span<double> ga = g(n.a);
          for (std::size_t i = 0; i < na_size; ++i) ga[i] += gy[i];
        }
        if (needs_grad(n.b)) {
          std::span<double> gb = g(n.b);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na_size + i];
        }
        break;
      }
      case Op::kSlice: {
        if (!needs_grad(n.a)) break;
        std::span<double> ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i)
          ga[static_cast<std::size_t>(n.i0) + i] += gy[i];
        break;
      }
    }
  }

  static std::string shape_str(const Node& n) {
    return "(" + std::to_string(n.r) + "x" + std::to_string(n.c) + ")";
  }

  std::string shape_msg(const std::string& op, const Node& a,
                        const Node& b) const {
    return "Tape::" + op + ": incompatible shapes " + shape_str(a) + " and " +
           shape_str(b);
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::kAdd: return "add";
      case Op::kSub: return "sub";
      case Op::kMul: return "mul";
      case Op::kDiv: return "div";
      default: return "op";
    }
  }
};

enum class Activation { kIdentity, kRelu, kSigmoid, kSoftplus };

struct LayerIds {
  Tape::Id w;
  Tape::Id b;
  Activation act = Activation::kIdentity;
};

inline Tape::Id apply_activation(Tape& t, Activation act, Tape::Id x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return t.relu(x);
    case Activation::kSigmoid: return t.sigmoid(x);
    case Activation::kSoftplus: return t.softplus(x);
  }
  throw ContractError("apply_activation: unknown activation");
}

// Chain of affine layers with activations over a column vector.
inline Tape::Id mlp_forward(Tape& t, std::span<const LayerIds> layers,
                            Tape::Id x) {
  Tape::Id h = x;
  for (const LayerIds& l : layers) {
    h = t.affine(l.w, h, l.b);
    h = apply_activation(t, l.act, h);
  }
  return h;
}

}  // namespace rce
