#include "rce/tensor.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "rce/rng.hpp"
#include "test_util.hpp"

using rce::Activation;
using rce::LayerIds;
using rce::Tape;
using rce::Tensor;
using rce::testing::max_grad_rel_err;
using rce::testing::random_tensor;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}

TEST(Tensor, ShapeValidation) {
  EXPECT_THROW(Tensor::matrix(0, 3), rce::DimensionError);
  EXPECT_THROW(Tensor::matrix(2, -1), rce::DimensionError);
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), rce::DimensionError);
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2);
  EXPECT_EQ(t.cols(), 3);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
}

TEST(Tape, MatmulMatchesEigen) {
  rce::Rng rng(7);
  for (auto [m, k, n] : {std::array{3, 4, 5}, {1, 7, 2}, {6, 1, 3}}) {
    Tensor a = random_tensor(m, k, rng);
    Tensor b = random_tensor(k, n, rng);
    Tape t;
    Tape::Id c = t.matmul(t.leaf(a), t.leaf(b));
    Eigen::MatrixXd want = to_eigen(a) * to_eigen(b);
    auto got = t.value(c);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        EXPECT_NEAR(got[static_cast<std::size_t>(i) * n + j], want(i, j), 1e-12);
  }
}

TEST(Tape, MatmulShapeMismatchThrows) {
  Tensor a = Tensor::matrix(2, 3);
  Tensor b = Tensor::matrix(2, 3);
  Tape t;
  EXPECT_THROW(t.matmul(t.leaf(a), t.leaf(b)), rce::DimensionError);
}

TEST(Tape, AffineMatchesMatmulAddBitwise) {
  rce::Rng rng(11);
  Tensor w = random_tensor(5, 9, rng);
  Tensor x = random_tensor(9, 1, rng);
  Tensor b = random_tensor(5, 1, rng);
  Tape t1;
  auto fused = t1.value(t1.affine(t1.leaf(w), t1.leaf(x), t1.leaf(b)));
  Tape t2;
  auto composed =
      t2.value(t2.add(t2.matmul(t2.leaf(w), t2.leaf(x)), t2.leaf(b)));
  for (std::size_t i = 0; i < fused.size(); ++i)
    EXPECT_EQ(fused[i], composed[i]);
}

TEST(Tape, AffineSparseInputSameBits) {
  // Mostly-zero input takes the sparse path; results must be identical to a
  // dense evaluation of the same numbers.
  rce::Rng rng(13);
  Tensor w = random_tensor(4, 50, rng);
  Tensor b = random_tensor(4, 1, rng);
  Tensor x = Tensor::vector(50);
  x.data[3] = 0.7;
  x.data[20] = -1.2;
  Tape t1;
  auto sparse = t1.value(t1.affine(t1.leaf(w), t1.leaf(x), t1.leaf(b)));
  Tape t2;
  auto dense =
      t2.value(t2.add(t2.matmul(t2.leaf(w), t2.leaf(x)), t2.leaf(b)));
  for (std::size_t i = 0; i < sparse.size(); ++i)
    EXPECT_EQ(sparse[i], dense[i]);
}

TEST(Tape, ElementwiseForward) {
  Tensor a = Tensor::from({3}, {1.0, -2.0, 3.0});
  Tensor b = Tensor::from({3}, {0.5, 2.0, -1.0});
  Tensor s = Tensor::from({1}, {2.0});
  Tape t;
  Tape::Id ia = t.leaf(a), ib = t.leaf(b), is = t.leaf(s);
  auto add = t.value(t.add(ia, ib));
  auto mul = t.value(t.mul(ia, ib));
  auto smul = t.value(t.mul(is, ia));
  auto sadd = t.value(t.add(ia, is));
  EXPECT_DOUBLE_EQ(add[1], 0.0);
  EXPECT_DOUBLE_EQ(mul[2], -3.0);
  EXPECT_DOUBLE_EQ(smul[1], -4.0);
  EXPECT_DOUBLE_EQ(sadd[2], 5.0);
  EXPECT_EQ(t.rows(t.mul(is, ia)), 3);
  Tensor c = Tensor::vector(4);
  EXPECT_THROW(t.add(ia, t.leaf(c)), rce::DimensionError);
}

TEST(Tape, UnaryForwardValues) {
  Tensor a = Tensor::from({4}, {-1.0, 0.0, 0.5, 2.0});
  Tape t;
  Tape::Id ia = t.leaf(a);
  auto r = t.value(t.relu(ia));
  EXPECT_DOUBLE_EQ(r[0], 0.0);
  EXPECT_DOUBLE_EQ(r[3], 2.0);
  auto sp = t.value(t.softplus(ia));
  EXPECT_NEAR(sp[1], std::log(2.0), 1e-15);
  auto sg = t.value(t.sigmoid(ia));
  EXPECT_NEAR(sg[1], 0.5, 1e-15);
  EXPECT_NEAR(sg[0], 1.0 / (1.0 + std::exp(1.0)), 1e-15);
}

TEST(Tape, StableActivationsAtExtremes) {
  Tensor a = Tensor::from({2}, {800.0, -800.0});
  Tape t;
  auto sp = t.value(t.softplus(t.leaf(a)));
  EXPECT_DOUBLE_EQ(sp[0], 800.0);
  EXPECT_DOUBLE_EQ(sp[1], 0.0);
  auto sg = t.value(t.sigmoid(t.leaf(a)));
  EXPECT_DOUBLE_EQ(sg[0], 1.0);
  EXPECT_DOUBLE_EQ(sg[1], 0.0);
}

TEST(Tape, DomainErrors) {
  Tensor a = Tensor::from({2}, {1.0, -0.5});
  Tensor z = Tensor::from({2}, {1.0, 0.0});
  Tape t;
  EXPECT_THROW(t.log(t.leaf(a)), rce::DomainError);
  EXPECT_THROW(t.div(t.leaf(a), t.leaf(z)), rce::DomainError);
  EXPECT_THROW(t.clamp(t.leaf(a), 2.0, 1.0), rce::DomainError);
}

TEST(Tape, BackwardRequiresScalar) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tape t;
  Tape::Id ia = t.leaf(a);
  EXPECT_THROW(t.backward(ia), rce::ContractError);
}

TEST(Tape, SliceConcatReshapeRoundTrip) {
  Tensor a = Tensor::from({5}, {1, 2, 3, 4, 5});
  Tape t;
  Tape::Id ia = t.leaf(a);
  Tape::Id s1 = t.slice(ia, 0, 2);
  Tape::Id s2 = t.slice(ia, 2, 3);
  Tape::Id back = t.concat(s1, s2);
  auto v = t.value(back);
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(v[static_cast<std::size_t>(i)], a.data[static_cast<std::size_t>(i)]);
  Tape::Id m = t.reshape(ia, 1, 5);
  EXPECT_EQ(t.rows(m), 1);
  EXPECT_EQ(t.cols(m), 5);
  EXPECT_THROW(t.slice(ia, 4, 2), rce::DimensionError);
  EXPECT_THROW(t.reshape(ia, 2, 3), rce::DimensionError);
}

// Central finite differences as the reference for every backward rule. Each
// case exercises one op inside a small smooth composite.

TEST(TapeGrad, MatmulChain) {
  rce::Rng rng(21);
  std::vector<Tensor> params{random_tensor(3, 4, rng), random_tensor(4, 2, rng),
                             random_tensor(2, 1, rng)};
  auto build = [](Tape& t, const std::vector<Tape::Id>& p) {
    return t.sum(t.matmul(t.matmul(p[0], p[1]), p[2]));
  };
  EXPECT_LT(max_grad_rel_err(params, build), 1e-7);
}

TEST(TapeGrad, ElementwiseOps) {
  rce::Rng rng(22);
  std::vector<Tensor> params{random_tensor(6, 1, rng, 0.5, 1.5),
                             random_tensor(6, 1, rng, 0.5, 1.5)};
  auto build = [](Tape& t, const std::vector<Tape::Id>& p) {
    Tape::Id prod = t.mul(p[0], p[1]);
    Tape::Id quot = t.div(p[0], p[1]);
    return t.sum(t.add(t.sub(prod, quot), t.neg(p[1])));
  };
  EXPECT_LT(max_grad_rel_err(params, build), 1e-7);
}

TEST(TapeGrad, ScalarBroadcast) {
  rce::Rng rng(23);
  std::vector<Tensor> params{random_tensor(5, 1, rng, 0.5, 2.0),
                             random_tensor(1, 1, rng, 0.5, 2.0)};
  auto build = [](Tape& t, const std::vector<Tape::Id>& p) {
    Tape::Id a = t.mul(p[0], p[1]);   // vector * scalar
    Tape::Id b = t.div(p[1], p[0]);   // scalar / vector
    Tape::Id c = t.sub(p[1], p[0]);   // scalar - vector
    return t.sum(t.add(t.add(a, b), c));
  };
  EXPECT_LT(max_grad_rel_err(params, build), 1e-7);
}

TEST(TapeGrad, SmoothUnaries) {
  rce::Rng rng(24);
  std::vector<Tensor> params{random_tensor(8, 1, rng, 0.2, 1.8)};
  auto build = [](Tape& t, const std::vector<Tape::Id>& p) {
    Tape::Id e = t.exp(t.scale(p[0], 0.3));
    Tape::Id l = t.log(p[0]);
    Tape::Id sg = t.sigmoid(p[0]);
    Tape::Id sp = t.softplus(t.neg(p[0]));
    return t.sum(t.add(t.add(e, l), t.add(sg, sp)));
  };
  EXPECT_LT(max_grad_rel_err(params, build), 1e-7);
}

TEST(TapeGrad, AffineAndStructural) {
  rce::Rng rng(25);
  std::vector<Tensor> params{random_tensor(4, 6, rng), random_tensor(6, 1, rng),
                             random_tensor(4, 1, rng)};
  auto build = [](Tape& t, const std::vector<Tape::Id>& p) {
    Tape::Id h = t.affine(p[0], p[1], p[2]);
    Tape::Id top = t.slice(h, 0, 2);
    Tape::Id bot = t.slice(h, 2, 2);
    Tape::Id joined = t.concat(t.add_scalar(top, 0.5), bot);
    return t.sum(t.mul(t.reshape(joined, 2, 2), t.reshape(joined, 2, 2)));
  };
  EXPECT_LT(max_grad_rel_err(params, build), 1e-7);
}

TEST(TapeGrad, ReluAwayFromKink) {
  // Fixed values keep every pre-activation far from zero, where the relu
  // derivative is exact.
  std::vector<Tensor> params{Tensor::from({4}, {-2.0, -0.5, 0.5, 2.0})};
  auto build = [](Tape& t, const std::vector<Tape::Id>& p) {
    return t.sum(t.relu(p[0]));
  };
  EXPECT_LT(max_grad_rel_err(params, build), 1e-9);
  Tape t;
  Tape::Id ia = t.leaf(params[0]);
  t.backward(t.sum(t.relu(ia)));
  auto g = t.grad(ia);
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], 0.0);
  EXPECT_DOUBLE_EQ(g[2], 1.0);
  EXPECT_DOUBLE_EQ(g[3], 1.0);
}

TEST(TapeGrad, ReluAtZeroPicksLowerBranch) {
  std::vector<Tensor> params{Tensor::from({1}, {0.0})};
  Tape t;
  Tape::Id ia = t.leaf(params[0]);
  t.backward(t.sum(t.relu(ia)));
  EXPECT_DOUBLE_EQ(t.grad(ia)[0], 0.0);
}

TEST(TapeGrad, ClampMasksOutsideRange) {
  std::vector<Tensor> params{Tensor::from({3}, {-5.0, 0.3, 5.0})};
  Tape t;
  Tape::Id ia = t.leaf(params[0]);
  t.backward(t.sum(t.clamp(ia, -1.0, 1.0)));
  auto g = t.grad(ia);
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], 1.0);
  EXPECT_DOUBLE_EQ(g[2], 0.0);
}

TEST(TapeGrad, SharedInputAccumulates) {
  // f = sum(a * a): gradient must be 2a, exercising repeated use of a node.
  std::vector<Tensor> params{Tensor::from({3}, {1.0, -2.0, 0.5})};
  Tape t;
  Tape::Id ia = t.leaf(params[0]);
  t.backward(t.sum(t.mul(ia, ia)));
  auto g = t.grad(ia);
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(g[static_cast<std::size_t>(i)], 2.0 * params[0].data[static_cast<std::size_t>(i)], 1e-14);
}

TEST(TapeGrad, ConstantsGetNoGradient) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tape t;
  Tape::Id ia = t.leaf(a);
  Tape::Id ic = t.constant_vector(std::vector<double>{3.0, 4.0});
  Tape::Id loss = t.sum(t.mul(ia, ic));
  t.backward(loss);
  EXPECT_TRUE(t.grad(ic).empty());
  auto g = t.grad(ia);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_DOUBLE_EQ(g[0], 3.0);
  EXPECT_DOUBLE_EQ(g[1], 4.0);
}

TEST(TapeGrad, UnusedLeafHasEmptyGradient) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tensor b = Tensor::from({2}, {3.0, 4.0});
  Tape t;
  Tape::Id ia = t.leaf(a);
  Tape::Id ib = t.leaf(b);
  t.backward(t.sum(ia));
  EXPECT_TRUE(t.grad(ib).empty());
  EXPECT_EQ(t.grad(ia).size(), 2u);
}

TEST(TapeGrad, RepeatedBackwardResets) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tape t;
  Tape::Id ia = t.leaf(a);
  Tape::Id loss = t.sum(t.mul(ia, ia));
  t.backward(loss);
  std::vector<double> first(t.grad(ia).begin(), t.grad(ia).end());
  t.backward(loss);
  std::vector<double> second(t.grad(ia).begin(), t.grad(ia).end());
  EXPECT_EQ(first, second);
}

TEST(TapeGrad, SinkLeafAccumulatesAcrossTapes) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  std::vector<double> sink(2, 0.0);
  for (int rep = 0; rep < 3; ++rep) {
    Tape t;
    Tape::Id ia = t.leaf_sink(a, sink);
    t.backward(t.sum(ia));
    ASSERT_EQ(t.grad(ia).size(), 2u);
  }
  EXPECT_DOUBLE_EQ(sink[0], 3.0);
  EXPECT_DOUBLE_EQ(sink[1], 3.0);
  std::vector<double> bad(3, 0.0);
  Tape t;
  EXPECT_THROW(t.leaf_sink(a, bad), rce::DimensionError);
}

TEST(TapeGrad, SinkMatchesPlainLeaf) {
  rce::Rng rng(29);
  Tensor w = random_tensor(3, 5, rng);
  Tensor x = random_tensor(5, 1, rng);
  Tensor b = random_tensor(3, 1, rng);
  std::vector<double> sink(w.size(), 0.0);
  {
    Tape t;
    Tape::Id iw = t.leaf_sink(w, sink);
    t.backward(t.sum(t.relu(t.affine(iw, t.leaf(x), t.leaf(b)))));
  }
  Tape t;
  Tape::Id iw = t.leaf(w);
  t.backward(t.sum(t.relu(t.affine(iw, t.leaf(x), t.leaf(b)))));
  auto g = t.grad(iw);
  ASSERT_EQ(g.size(), sink.size());
  for (std::size_t i = 0; i < sink.size(); ++i) EXPECT_EQ(sink[i], g[i]);
}

TEST(Mlp, MatchesManualComputation) {
  rce::Rng rng(31);
  Tensor w1 = random_tensor(4, 3, rng);
  Tensor b1 = random_tensor(4, 1, rng);
  Tensor w2 = random_tensor(2, 4, rng);
  Tensor b2 = random_tensor(2, 1, rng);
  Tensor x = random_tensor(3, 1, rng);
  Tape t;
  std::vector<LayerIds> layers{
      {t.leaf(w1), t.leaf(b1), Activation::kRelu},
      {t.leaf(w2), t.leaf(b2), Activation::kIdentity}};
  auto out = t.value(rce::mlp_forward(t, layers, t.leaf(x)));

  Eigen::VectorXd h = to_eigen(w1) * to_eigen(x) + to_eigen(b1);
  h = h.cwiseMax(0.0);
  Eigen::VectorXd want = to_eigen(w2) * h + to_eigen(b2);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(out[static_cast<std::size_t>(i)], want(i), 1e-12);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  rce::Rng rng(32);
  std::vector<Tensor> params{random_tensor(5, 3, rng), random_tensor(5, 1, rng),
                             random_tensor(2, 5, rng), random_tensor(2, 1, rng),
                             random_tensor(3, 1, rng)};
  auto build = [](Tape& t, const std::vector<Tape::Id>& p) {
    std::vector<LayerIds> layers{{p[0], p[1], Activation::kSoftplus},
                                 {p[2], p[3], Activation::kSigmoid}};
    return t.sum(rce::mlp_forward(t, layers, p[4]));
  };
  EXPECT_LT(max_grad_rel_err(params, build), 1e-6);
}

}  // namespace
