#pragma once

// Central finite-difference gradient checks against the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gate/autodiff.hpp"

namespace gate::check {

/// ||a - n|| / (||a|| + ||n||), zero when both vanish.
inline double relative_error(const std::vector<double>& analytic,
                             const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

using InputLoss = std::function<ad::Value(ad::Tape&, const std::vector<ad::Value>&)>;

/// Differentiates `f` with respect to every entry of every input matrix.
inline double check_inputs(std::vector<ad::Matrix> inputs, const InputLoss& f, double h = 1e-6) {
  std::vector<double> analytic, numeric;
  {
    ad::Tape tape;
    std::vector<ad::Value> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    ad::Value loss = f(tape, vars);
    tape.backward(loss);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const ad::Matrix& g = vars[k].grad();
      for (Eigen::Index i = 0; i < inputs[k].size(); ++i)
        analytic.push_back(g.size() == 0 ? 0.0 : g.data()[i]);
    }
  }
  auto eval = [&] {
    ad::Tape tape;
    std::vector<ad::Value> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    return f(tape, vars).item();
  };
  for (auto& m : inputs) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double x = m.data()[i];
      m.data()[i] = x + h;
      const double up = eval();
      m.data()[i] = x - h;
      const double down = eval();
      m.data()[i] = x;
      numeric.push_back((up - down) / (2.0 * h));
    }
  }
  return relative_error(analytic, numeric);
}

using ParamLoss = std::function<ad::Value(ad::Tape&)>;

/// Differentiates `f` with respect to every entry of `params`. `f` must bind
/// the parameters itself and be deterministic across calls.
inline double check_params(const std::vector<ad::Parameter*>& params, const ParamLoss& f,
                           double h = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    tape.backward(f(tape));
  }
  std::vector<double> analytic, numeric;
  for (auto* p : params)
    for (Eigen::Index i = 0; i < p->grad.size(); ++i) analytic.push_back(p->grad.data()[i]);
  auto eval = [&] {
    ad::Tape tape;
    return f(tape).item();
  };
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double x = p->value.data()[i];
      p->value.data()[i] = x + h;
      const double up = eval();
      p->value.data()[i] = x - h;
      const double down = eval();
      p->value.data()[i] = x;
      numeric.push_back((up - down) / (2.0 * h));
    }
  }
  return relative_error(analytic, numeric);
}

inline ad::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// Moves zero-initialized biases to a generic point so that no ReLU input sits
/// exactly on the kink, where one-sided slopes differ.
inline void jitter_biases(const std::vector<ad::Parameter*>& params, std::mt19937_64& rng,
                          double scale = 0.1) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* p : params)
    if (p->name.size() > 2 && p->name.compare(p->name.size() - 2, 2, ".b") == 0)
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
}

}  // namespace gate::check
