#include <gtest/gtest.h>

#include <array>
#include <random>

#include "gate/autodiff.hpp"
#include "gradcheck.hpp"

using namespace gate;
using ad::Matrix;
using ad::Tape;
using ad::Value;
using check::check_inputs;
using check::random_matrix;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  Eigen::Index i = 0;
  for (auto r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

// Inputs away from the ReLU kink so central differences stay on one branch.
Matrix off_kink(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Matrix m = random_matrix(r, c, rng);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (std::abs(m.data()[i]) < 0.05) m.data()[i] += 0.1;
  return m;
}

}  // namespace

TEST(Autodiff, MatmulIdentity) {
  Tape t;
  Value y = ad::matmul(t.constant(Matrix::Identity(2, 2)), t.constant(mat({{5}, {7}})));
  EXPECT_EQ(y.data(), mat({{5}, {7}}));
}

TEST(Autodiff, MatmulHandValue) {
  Tape t;
  Value y = ad::matmul(t.constant(mat({{1, 2}, {3, 4}})), t.constant(mat({{1}, {1}})));
  EXPECT_EQ(y.data(), mat({{3}, {7}}));
}

TEST(Autodiff, MatmulShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(ad::matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))),
               ad::DimensionError);
}

TEST(Autodiff, Relu) {
  Tape t;
  EXPECT_EQ(ad::relu(t.constant(mat({{-1, 0, 2}}))).data(), mat({{0, 0, 2}}));
}

TEST(Autodiff, Mse) {
  Tape t;
  EXPECT_DOUBLE_EQ(ad::mse(t.constant(mat({{1, 2}})), t.constant(mat({{0, 0}}))).item(), 2.5);
}

TEST(Autodiff, MseShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(ad::mse(t.constant(Matrix::Zero(1, 2)), t.constant(Matrix::Zero(1, 3))),
               ad::DimensionError);
}

TEST(Autodiff, DropoutZeroFraction) {
  Tape t;
  std::mt19937_64 rng(3);
  Value y = ad::dropout(t.constant(Matrix::Ones(1000, 1000)), 0.5, rng, true);
  const double zeros = static_cast<double>((y.data().array() == 0.0).count()) / 1e6;
  EXPECT_NEAR(zeros, 0.5, 0.01);
  EXPECT_NEAR(y.data().mean(), 1.0, 0.01);
}

TEST(Autodiff, DropoutIdentityInEvalMode) {
  Tape t;
  std::mt19937_64 rng(3);
  Matrix x = random_matrix(4, 5, rng);
  EXPECT_EQ(ad::dropout(t.constant(x), 0.5, rng, false).data(), x);
}

TEST(Autodiff, DropoutRejectsBadRate) {
  Tape t;
  std::mt19937_64 rng(3);
  EXPECT_THROW(ad::dropout(t.constant(Matrix::Ones(1, 1)), 1.0, rng, true), ad::ParameterError);
}

TEST(Autodiff, SumGradient) {
  Tape t;
  Value x = t.variable(mat({{1, 2, 3}}));
  t.backward(ad::sum(x));
  EXPECT_EQ(x.grad(), mat({{1, 1, 1}}));
}

TEST(Autodiff, FanOutAccumulates) {
  Tape t;
  Value x = t.variable(mat({{1, 2, 3}}));
  t.backward(ad::sum(ad::add(x, x)));
  EXPECT_EQ(x.grad(), mat({{2, 2, 2}}));
}

TEST(Autodiff, NonScalarLossIsContractError) {
  Tape t;
  Value x = t.variable(mat({{1, 2}}));
  EXPECT_THROW(t.backward(x), ad::ContractError);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape t;
  Value c = t.constant(mat({{1, 2}}));
  Value x = t.variable(mat({{3, 4}}));
  t.backward(ad::sum(ad::add(c, x)));
  EXPECT_EQ(c.grad().size(), 0);
  EXPECT_FALSE(c.requires_grad());
}

TEST(Autodiff, ParameterGradientAndTouched) {
  ad::Parameter p("w", mat({{2, 3}}));
  ad::Parameter q("unused", mat({{1}}));
  p.zero_grad();
  q.zero_grad();
  Tape t;
  Value w = t.param(p);
  t.param(q);
  t.backward(ad::sum(ad::scale(w, 4.0)));
  EXPECT_EQ(p.grad, mat({{4, 4}}));
  EXPECT_TRUE(p.touched);
  EXPECT_FALSE(q.touched);
}

TEST(Autodiff, GatherScatterHandValues) {
  Tape t;
  Value x = t.constant(mat({{1, 10}, {2, 20}, {3, 30}}));
  const std::array<int, 3> idx{2, 0, 2};
  EXPECT_EQ(ad::gather_rows(x, idx).data(), mat({{3, 30}, {1, 10}, {3, 30}}));
  EXPECT_EQ(ad::scatter_add_rows(x, idx, 4).data(), mat({{2, 20}, {0, 0}, {4, 40}, {0, 0}}));
}

TEST(Autodiff, RowNormsZeroRowHasZeroGradient) {
  Tape t;
  Value x = t.variable(mat({{0, 0}, {3, 4}}));
  Value n = ad::row_norms(x);
  EXPECT_EQ(n.data(), mat({{0}, {5}}));
  t.backward(ad::sum(n));
  EXPECT_TRUE(x.grad().isApprox(mat({{0, 0}, {0.6, 0.8}}), 1e-15));
}

TEST(Autodiff, VstackSliceConcatShapes) {
  Tape t;
  Value a = t.constant(mat({{1, 2}}));
  Value b = t.constant(mat({{3, 4}, {5, 6}}));
  const std::array<Value, 2> parts{a, b};
  Value s = ad::vstack(parts);
  EXPECT_EQ(s.data(), mat({{1, 2}, {3, 4}, {5, 6}}));
  EXPECT_EQ(ad::slice_rows(s, 1, 2).data(), b.data());
  EXPECT_EQ(ad::concat(b, b).shape(), (ad::Shape{2, 4}));
  EXPECT_THROW(ad::concat(a, b), ad::DimensionError);
}

// Finite-difference checks of every operation.

class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{11};
};

TEST_F(OpGradient, Matmul) {
  EXPECT_LT(check_inputs({random_matrix(3, 4, rng), random_matrix(4, 2, rng)},
                         [](Tape&, const std::vector<Value>& v) {
                           return ad::sum(ad::matmul(v[0], v[1]));
                         }),
            1e-6);
}

TEST_F(OpGradient, AddSubScaleBias) {
  EXPECT_LT(check_inputs({random_matrix(3, 2, rng), random_matrix(3, 2, rng), random_matrix(1, 2, rng)},
                         [](Tape&, const std::vector<Value>& v) {
                           Value y = ad::add_bias(ad::sub(ad::add(v[0], v[1]), ad::scale(v[1], 3.0)), v[2]);
                           return ad::mse(y, ad::scale(v[0], 0.5));
                         }),
            1e-6);
}

TEST_F(OpGradient, Relu) {
  EXPECT_LT(check_inputs({off_kink(4, 3, rng)},
                         [](Tape&, const std::vector<Value>& v) {
                           return ad::mse(ad::relu(v[0]), ad::scale(v[0], 0.3));
                         }),
            1e-6);
}

TEST_F(OpGradient, ConcatVstackSlice) {
  EXPECT_LT(check_inputs({random_matrix(2, 3, rng), random_matrix(2, 2, rng), random_matrix(1, 5, rng)},
                         [](Tape&, const std::vector<Value>& v) {
                           Value c = ad::concat(v[0], v[1]);
                           const std::array<Value, 2> parts{c, v[2]};
                           Value s = ad::vstack(parts);
                           Value tail = ad::slice_rows(s, 1, 2);
                           return ad::mse(tail, ad::scale(ad::slice_rows(s, 0, 2), -1.0));
                         }),
            1e-6);
}

TEST_F(OpGradient, ReductionsAndNorms) {
  EXPECT_LT(check_inputs({random_matrix(4, 3, rng)},
                         [](Tape&, const std::vector<Value>& v) {
                           Value r = ad::reduce_sum_rows(v[0]);
                           Value n = ad::row_norms(v[0]);
                           return ad::add(ad::mse(r, ad::scale(r, 0.0)), ad::sum(n));
                         }),
            1e-6);
}

TEST_F(OpGradient, GatherScatter) {
  const std::vector<int> gi{0, 2, 2, 1, 3};
  const std::vector<int> si{1, 1, 0, 4, 2};
  EXPECT_LT(check_inputs({random_matrix(4, 3, rng)},
                         [&](Tape&, const std::vector<Value>& v) {
                           Value g = ad::gather_rows(v[0], gi);
                           Value s = ad::scatter_add_rows(g, si, 5);
                           return ad::mse(s, ad::scale(s, 0.2));
                         }),
            1e-6);
}

TEST_F(OpGradient, DropoutWithFixedMask) {
  EXPECT_LT(check_inputs({random_matrix(3, 4, rng)},
                         [](Tape&, const std::vector<Value>& v) {
                           std::mt19937_64 mask_rng(5);
                           Value d = ad::dropout(v[0], 0.3, mask_rng, true);
                           return ad::mse(d, ad::scale(v[0], 0.1));
                         }),
            1e-6);
}

TEST_F(OpGradient, TwoLayerPerceptron) {
  Matrix x = random_matrix(5, 3, rng);
  Matrix y = random_matrix(5, 1, rng);
  EXPECT_LT(check_inputs({random_matrix(3, 6, rng), random_matrix(1, 6, rng, 0.1, 0.5),
                          random_matrix(6, 1, rng)},
                         [&](Tape& t, const std::vector<Value>& v) {
                           Value h = ad::relu(ad::add_bias(ad::matmul(t.constant(x), v[0]), v[1]));
                           return ad::mse(ad::matmul(h, v[2]), t.constant(y));
                         }),
            1e-5);
}
