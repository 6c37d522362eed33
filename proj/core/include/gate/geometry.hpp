#pragma once

// Numerical Riemannian geometry: Christoffel symbols of a metric field by
// central differences, RK4 geodesic integration, and pullback-metric
// diagnostics of a learned map.

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gate::nn {
class Model;
}

namespace gate::geo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VectorMap = std::function<Vec(const Vec&)>;

class LinearAlgebraError : public std::runtime_error {
 public:
  LinearAlgebraError(const std::string& what, double condition);
  double condition() const { return condition_; }

 private:
  double condition_;
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double last_tau);
  double last_tau() const { return last_tau_; }

 private:
  double last_tau_;
};

struct MetricField {
  std::string name;
  std::size_t dim = 0;
  std::function<Mat(const Vec&)> eval;

  Mat operator()(const Vec& x) const;
};

MetricField euclidean(std::size_t dim);
/// Unit 2-sphere in (theta, phi): g = diag(1, sin^2 theta).
MetricField sphere();
MetricField scaled(const MetricField& g, double c);

/// Max |g - g^T| and smallest leading principal minor at x.
double symmetry_residual(const Mat& g);
double min_leading_minor(const Mat& g);

struct Inverse {
  Mat inverse;
  double condition = 0.0;  // 1-norm condition estimate ||g|| ||g^-1||
};
/// Gauss-Jordan elimination with partial pivoting; throws LinearAlgebraError
/// when a pivot vanishes relative to the matrix scale.
Inverse invert(const Mat& g);

/// Gamma^l_{mn}, symmetric in the lower index pair.
class Christoffel {
 public:
  explicit Christoffel(std::size_t dim = 0) : dim_(dim), data_(dim * dim * dim, 0.0) {}
  double operator()(std::size_t l, std::size_t m, std::size_t n) const {
    return data_[(l * dim_ + m) * dim_ + n];
  }
  double& at(std::size_t l, std::size_t m, std::size_t n) { return data_[(l * dim_ + m) * dim_ + n]; }
  std::size_t dim() const { return dim_; }
  double max_abs() const;
  /// Contracts Gamma^r_{ln} v^l v^n for every r.
  Vec contract(const Vec& v) const;

 private:
  std::size_t dim_;
  std::vector<double> data_;
};

struct ChristoffelResult {
  Christoffel gamma;
  double condition = 0.0;
};

/// Gamma^l_{mn} = 1/2 g^{lr} (d_m g_{nr} + d_n g_{rm} - d_r g_{mn}), metric
/// derivatives by central differences with step h.
ChristoffelResult christoffel(const MetricField& g, const Vec& x, double h = 1e-5);

struct GeodesicSample {
  double tau = 0.0;
  Vec x;
  Vec v;
};

struct GeodesicPath {
  std::vector<GeodesicSample> samples;
  double step = 0.0;
};

/// Classical RK4 on x' = v, v' = -Gamma(x)[v, v] over [tau0, tau1].
GeodesicPath geodesic_integrate(const MetricField& g, const Vec& x0, const Vec& v0, double tau0,
                                double tau1, std::size_t steps, double h = 1e-5);

/// g(v, v) at x.
double tangent_norm2(const MetricField& g, const Vec& x, const Vec& v);

/// J^T J with J the central-difference Jacobian of f at z.
Mat pullback_metric(const VectorMap& f, const Vec& z, double h = 1e-5);
Mat jacobian(const VectorMap& f, const Vec& z, double h = 1e-5);

/// ||g / mean(diag g) - I||_F.
double flatness_residual(const Mat& g);

/// Eval-mode transfer network of `task` as a map on the latent space.
VectorMap transfer_map(nn::Model& model, std::size_t task);

}  // namespace gate::geo
