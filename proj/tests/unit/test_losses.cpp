#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/LU>

#include "gate/losses.hpp"
#include "gradcheck.hpp"

using namespace gate;
using ad::Matrix;
using ad::Tape;
using ad::Value;
using loss::PerturbedSet;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

// Plain-loop references over one pivot set of N rows with M perturbations.
double ref_vector_dist(const Matrix& mt, const Matrix& bt, const Matrix& ms, const Matrix& bs, int M) {
  const Eigen::Index n = mt.rows(), d = mt.cols();
  double acc = 0.0;
  for (int j = 0; j < M; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < d; ++c) {
        const double dt = mt(i, c) - bt(j * n + i, c);
        const double ds = ms(i, c) - bs(j * n + i, c);
        acc += (dt - ds) * (dt - ds);
      }
  return acc / static_cast<double>(M * n * d);
}

double ref_scalar_dist(const Matrix& mt, const Matrix& bt, const Matrix& ms, const Matrix& bs, int M) {
  const Eigen::Index n = mt.rows(), d = mt.cols();
  double acc = 0.0;
  for (int j = 0; j < M; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      double nt = 0.0, ns = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        nt += std::pow(mt(i, c) - bt(j * n + i, c), 2);
        ns += std::pow(ms(i, c) - bs(j * n + i, c), 2);
      }
      acc += std::pow(std::sqrt(nt) - std::sqrt(ns), 2);
    }
  return acc / static_cast<double>(M * n);
}

struct Latents {
  Matrix mt, ms, bt, bs;
};

Latents random_latents(int n, int d, int M, std::mt19937_64& rng) {
  return {check::random_matrix(n, d, rng), check::random_matrix(n, d, rng),
          check::random_matrix(n * M, d, rng), check::random_matrix(n * M, d, rng)};
}

}  // namespace

TEST(LossReg, HandValues) {
  Tape t;
  Value y = t.constant(row({1, 2}));
  EXPECT_EQ(loss::loss_reg(y, y).item(), 0.0);
  EXPECT_DOUBLE_EQ(loss::loss_reg(y, t.constant(row({0, 0}))).item(), 2.5);
  EXPECT_THROW(loss::loss_reg(y, t.constant(row({0, 0, 0}))), ad::DimensionError);
}

TEST(LossReg, QuadraticHomogeneity) {
  std::mt19937_64 rng(1);
  Matrix y = check::random_matrix(7, 1, rng), yh = check::random_matrix(7, 1, rng);
  Tape t;
  const double base = loss::loss_reg(t.constant(y), t.constant(yh)).item();
  const double scaled = loss::loss_reg(t.constant(y), t.constant(y + 3.0 * (yh - y))).item();
  EXPECT_NEAR(scaled, 9.0 * base, 1e-12);
}

TEST(LossAuto, IdentityAndInvertibleLinearRoundTrip) {
  std::mt19937_64 rng(2);
  Matrix z = check::random_matrix(5, 4, rng);
  Matrix a = check::random_matrix(4, 4, rng) + 3.0 * Matrix::Identity(4, 4);
  Matrix a_inv = a.inverse();
  Tape t;
  Value zv = t.constant(z);
  EXPECT_EQ(loss::loss_auto(zv, zv).item(), 0.0);
  Value m = ad::matmul(zv, t.constant(a));
  Value back = ad::matmul(m, t.constant(a_inv));
  EXPECT_LE(loss::loss_auto(zv, back).item(), 1e-10);
  EXPECT_THROW(loss::loss_auto(zv, t.constant(Matrix::Zero(5, 3))), ad::DimensionError);
}

TEST(LossMap, ConstantPredictorOnNormalizedLabels) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Matrix y(200, 1);
  for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, 0) = g(rng);
  y.array() -= y.mean();
  y /= std::sqrt(y.squaredNorm() / static_cast<double>(y.rows()));
  Tape t;
  const double v = loss::loss_map(t.constant(y), t.constant(Matrix::Constant(200, 1, y.mean()))).item();
  EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(LossCons, IdenticalPipelinesGiveZero) {
  std::mt19937_64 rng(4);
  Latents l = random_latents(3, 5, 2, rng);
  Tape t;
  Value m = t.constant(l.mt), b = t.constant(l.bt);
  for (auto mode : {loss::ConsistencyMode::Paired, loss::ConsistencyMode::AlgorithmLiteral}) {
    if (mode == loss::ConsistencyMode::AlgorithmLiteral) b = ad::gather_rows(m, std::vector<int>{0, 1, 2, 0, 1, 2});
    EXPECT_EQ(loss::loss_cons(m, m, {b, 2}, {b, 2}, mode).item(), 0.0);
  }
}

TEST(LossCons, UniformOffsetGivesEpsilonSquared) {
  std::mt19937_64 rng(5);
  Matrix ms = check::random_matrix(1, 50, rng);
  const double eps = 0.125;
  Matrix mt = ms.array() + eps;
  Matrix bar = check::random_matrix(3, 50, rng);
  Tape t;
  const double v = loss::loss_cons(t.constant(mt), t.constant(ms), {t.constant(bar), 3},
                                   {t.constant(bar), 3})
                       .item();
  EXPECT_DOUBLE_EQ(v, eps * eps);
}

TEST(LossCons, PairedIsSymmetric) {
  std::mt19937_64 rng(6);
  Latents l = random_latents(4, 6, 3, rng);
  Tape t;
  Value mt = t.constant(l.mt), ms = t.constant(l.ms), bt = t.constant(l.bt), bs = t.constant(l.bs);
  EXPECT_DOUBLE_EQ(loss::loss_cons(mt, ms, {bt, 3}, {bs, 3}).item(),
                   loss::loss_cons(ms, mt, {bs, 3}, {bt, 3}).item());
}

TEST(LossCons, LiteralModeComparesPerturbationsToSourcePivot) {
  std::mt19937_64 rng(7);
  Latents l = random_latents(2, 3, 2, rng);
  double ref = 0.0;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i)
      for (int c = 0; c < 3; ++c) ref += std::pow(l.bt(j * 2 + i, c) - l.ms(i, c), 2);
  ref /= 12.0;
  Tape t;
  const double v = loss::loss_cons(t.constant(l.mt), t.constant(l.ms), {t.constant(l.bt), 2},
                                   {t.constant(l.bs), 2}, loss::ConsistencyMode::AlgorithmLiteral)
                       .item();
  EXPECT_NEAR(v, ref, 1e-15);
}

TEST(LossCons, CountMismatchThrows) {
  std::mt19937_64 rng(8);
  Latents l = random_latents(2, 3, 2, rng);
  Tape t;
  Value b3 = t.constant(check::random_matrix(6, 3, rng));
  EXPECT_THROW(loss::loss_cons(t.constant(l.mt), t.constant(l.ms), {t.constant(l.bt), 2}, {b3, 3}),
               ad::DimensionError);
  EXPECT_THROW(loss::loss_dist(t.constant(l.mt), {t.constant(l.bt), 2}, t.constant(l.ms), {b3, 3}),
               ad::DimensionError);
}

TEST(LossDist, MatchesReference) {
  std::mt19937_64 rng(9);
  Latents l = random_latents(3, 4, 5, rng);
  Tape t;
  Value mt = t.constant(l.mt), ms = t.constant(l.ms), bt = t.constant(l.bt), bs = t.constant(l.bs);
  EXPECT_NEAR(loss::loss_dist(mt, {bt, 5}, ms, {bs, 5}).item(), ref_vector_dist(l.mt, l.bt, l.ms, l.bs, 5), 1e-14);
  EXPECT_NEAR(loss::loss_dist(mt, {bt, 5}, ms, {bs, 5}, loss::DistanceMode::Scalar).item(),
              ref_scalar_dist(l.mt, l.bt, l.ms, l.bs, 5), 1e-14);
}

TEST(LossDist, IdenticalDisplacementsGiveZero) {
  std::mt19937_64 rng(10);
  Latents l = random_latents(2, 4, 3, rng);
  Matrix offset = check::random_matrix(1, 4, rng);
  Matrix ms = l.mt.rowwise() + offset.row(0);
  Matrix bs = l.bt.rowwise() + offset.row(0);
  Tape t;
  for (auto mode : {loss::DistanceMode::Vector, loss::DistanceMode::Scalar})
    EXPECT_NEAR(loss::loss_dist(t.constant(l.mt), {t.constant(l.bt), 3}, t.constant(ms), {t.constant(bs), 3}, mode).item(),
                0.0, 1e-15);
}

TEST(LossDist, SignFlipSeparatesModes) {
  std::mt19937_64 rng(11);
  Matrix mt = check::random_matrix(2, 5, rng), ms = check::random_matrix(2, 5, rng);
  Matrix disp = check::random_matrix(6, 5, rng);
  Matrix bt(6, 5), bs(6, 5);
  for (int j = 0; j < 3; ++j) {
    bt.middleRows(2 * j, 2) = mt - disp.middleRows(2 * j, 2);
    bs.middleRows(2 * j, 2) = ms + disp.middleRows(2 * j, 2);
  }
  Tape t;
  Value a = t.constant(mt), b = t.constant(ms);
  EXPECT_GT(loss::loss_dist(a, {t.constant(bt), 3}, b, {t.constant(bs), 3}).item(), 0.0);
  EXPECT_NEAR(loss::loss_dist(a, {t.constant(bt), 3}, b, {t.constant(bs), 3}, loss::DistanceMode::Scalar).item(),
              0.0, 1e-12);
}

TEST(LossDist, TranslationInvariantExactly) {
  std::mt19937_64 rng(12);
  // Dyadic values keep every difference exact in binary floating point.
  auto dyadic = [&](int r, int c) {
    Matrix m = check::random_matrix(r, c, rng);
    return Matrix((m * 64.0).array().round() / 64.0);
  };
  Matrix mt = dyadic(3, 4), bt = dyadic(6, 4), ms = dyadic(3, 4), bs = dyadic(6, 4);
  Tape t;
  for (auto mode : {loss::DistanceMode::Vector, loss::DistanceMode::Scalar}) {
    const double base = loss::loss_dist(t.constant(mt), {t.constant(bt), 2}, t.constant(ms), {t.constant(bs), 2}, mode).item();
    const double moved = loss::loss_dist(t.constant(mt.array() + 5.0), {t.constant(bt.array() + 5.0), 2},
                                         t.constant(ms), {t.constant(bs), 2}, mode).item();
    EXPECT_EQ(base, moved);
  }
}

TEST(LossTotal, WeightedSum) {
  Tape t;
  loss::LossBundle b;
  b.reg = t.constant(row({0.1}));
  b.autoenc = t.constant(row({0.2}));
  b.map = t.constant(row({0.3}));
  b.cons = t.constant(row({0.4}));
  b.dist = t.constant(row({0.5}));
  EXPECT_NEAR(loss::loss_total(b, {}).item(), 1.5, 1e-15);
  EXPECT_EQ(loss::loss_total(b, {0, 0, 0, 0}).item(), 0.1);
  EXPECT_NEAR(loss::loss_total(b, {1, 2, 3, 4}).item(), 0.1 + 0.2 + 0.6 + 1.2 + 2.0, 1e-15);
}

TEST(LossTotal, ZeroDeltaDetachesDistance) {
  Tape t;
  Value d = t.variable(row({0.5}));
  Value r = t.variable(row({0.1}));
  loss::LossBundle b;
  b.reg = r;
  b.dist = d;
  t.backward(loss::loss_total(b, {1, 1, 1, 0}));
  EXPECT_EQ(d.grad().size(), 0);
  EXPECT_EQ(r.grad()(0, 0), 1.0);
}

TEST(LossWeights, RejectNegativeOrNonFinite) {
  EXPECT_THROW((loss::LossWeights{-1, 1, 1, 1}.validate()), ad::ParameterError);
  EXPECT_THROW((loss::LossWeights{1, 1, NAN, 1}.validate()), ad::ParameterError);
  EXPECT_NO_THROW((loss::LossWeights{0, 0, 0, 0}.validate()));
}

TEST(LossModes, StringRoundTrip) {
  EXPECT_EQ(loss::consistency_mode_from_string("algorithm-literal"), loss::ConsistencyMode::AlgorithmLiteral);
  EXPECT_EQ(loss::distance_mode_from_string(loss::to_string(loss::DistanceMode::Scalar)), loss::DistanceMode::Scalar);
  EXPECT_THROW(loss::distance_mode_from_string("euclid"), ad::ParameterError);
}

TEST(LossGradient, AllTermsAgreeWithFiniteDifferences) {
  std::mt19937_64 rng(13);
  Latents l = random_latents(2, 3, 2, rng);
  const std::vector<Matrix> in{l.mt, l.ms, l.bt, l.bs};
  for (auto cm : {loss::ConsistencyMode::Paired, loss::ConsistencyMode::AlgorithmLiteral})
    EXPECT_LT(check::check_inputs(in, [&](Tape&, const std::vector<Value>& v) {
                return loss::loss_cons(v[0], v[1], {v[2], 2}, {v[3], 2}, cm);
              }),
              1e-6);
  for (auto dm : {loss::DistanceMode::Vector, loss::DistanceMode::Scalar})
    EXPECT_LT(check::check_inputs(in, [&](Tape&, const std::vector<Value>& v) {
                return loss::loss_dist(v[0], {v[2], 2}, v[1], {v[3], 2}, dm);
              }),
              1e-6);
}

TEST(LossValues, AreNonNegativeOnRandomInputs) {
  std::mt19937_64 rng(14);
  for (int k = 0; k < 50; ++k) {
    Latents l = random_latents(3, 4, 2, rng);
    Tape t;
    Value mt = t.constant(l.mt), ms = t.constant(l.ms), bt = t.constant(l.bt), bs = t.constant(l.bs);
    EXPECT_GE(loss::loss_reg(mt, ms).item(), 0.0);
    EXPECT_GE(loss::loss_auto(mt, ms).item(), 0.0);
    EXPECT_GE(loss::loss_map(mt, ms).item(), 0.0);
    EXPECT_GE(loss::loss_cons(mt, ms, {bt, 2}, {bs, 2}).item(), 0.0);
    EXPECT_GE(loss::loss_dist(mt, {bt, 2}, ms, {bs, 2}).item(), 0.0);
  }
}
