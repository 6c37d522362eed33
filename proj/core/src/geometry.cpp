#include "gate/geometry.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "gate/networks.hpp"

namespace gate::geo {

LinearAlgebraError::LinearAlgebraError(const std::string& what, double condition)
    : std::runtime_error(what + " (condition estimate " + std::to_string(condition) + ")"),
      condition_(condition) {}

IntegrationError::IntegrationError(const std::string& what, double last_tau)
    : std::runtime_error(what + " (last valid tau " + std::to_string(last_tau) + ")"),
      last_tau_(last_tau) {}

Mat MetricField::operator()(const Vec& x) const {
  if (static_cast<std::size_t>(x.size()) != dim)
    throw std::invalid_argument(name + ": point of dimension " + std::to_string(x.size()) +
                                ", expected " + std::to_string(dim));
  return eval(x);
}

MetricField euclidean(std::size_t dim) {
  return {"euclidean", dim, [dim](const Vec&) {
            return Mat::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
          }};
}

MetricField sphere() {
  return {"sphere", 2, [](const Vec& x) {
            Mat g = Mat::Zero(2, 2);
            const double s = std::sin(x(0));
            g(0, 0) = 1.0;
            g(1, 1) = s * s;
            return g;
          }};
}

MetricField scaled(const MetricField& g, double c) {
  return {g.name + "*" + std::to_string(c), g.dim, [g, c](const Vec& x) { return Mat(c * g(x)); }};
}

double symmetry_residual(const Mat& g) { return (g - g.transpose()).cwiseAbs().maxCoeff(); }

double min_leading_minor(const Mat& g) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 1; k <= g.rows(); ++k) {
    // determinant via elimination on the leading k x k block
    Mat a = g.topLeftCorner(k, k);
    double det = 1.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      Eigen::Index piv = c;
      for (Eigen::Index r = c + 1; r < k; ++r)
        if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
      if (a(piv, c) == 0.0) {
        det = 0.0;
        break;
      }
      if (piv != c) {
        a.row(piv).swap(a.row(c));
        det = -det;
      }
      det *= a(c, c);
      for (Eigen::Index r = c + 1; r < k; ++r) a.row(r) -= (a(r, c) / a(c, c)) * a.row(c);
    }
    best = std::min(best, det);
  }
  return best;
}

Inverse invert(const Mat& g) {
  const Eigen::Index n = g.rows();
  if (g.cols() != n) throw std::invalid_argument("invert: matrix is not square");
  const double norm1 = g.cwiseAbs().colwise().sum().maxCoeff();
  Mat a = g;
  Mat inv = Mat::Identity(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index piv = c;
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (std::abs(a(piv, c)) <= 1e-14 * std::max(norm1, 1e-300))
      throw LinearAlgebraError("singular metric", std::numeric_limits<double>::infinity());
    a.row(c).swap(a.row(piv));
    inv.row(c).swap(inv.row(piv));
    const double p = a(c, c);
    a.row(c) /= p;
    inv.row(c) /= p;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      if (f == 0.0) continue;
      a.row(r) -= f * a.row(c);
      inv.row(r) -= f * inv.row(c);
    }
  }
  const double cond = norm1 * inv.cwiseAbs().colwise().sum().maxCoeff();
  if (!std::isfinite(cond) || cond > 1e14) throw LinearAlgebraError("ill-conditioned metric", cond);
  return {inv, cond};
}

double Christoffel::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Vec Christoffel::contract(const Vec& v) const {
  Vec out = Vec::Zero(static_cast<Eigen::Index>(dim_));
  for (std::size_t r = 0; r < dim_; ++r)
    for (std::size_t l = 0; l < dim_; ++l)
      for (std::size_t n = 0; n < dim_; ++n) out(r) += (*this)(r, l, n) * v(l) * v(n);
  return out;
}

ChristoffelResult christoffel(const MetricField& g, const Vec& x, double h) {
  const std::size_t d = g.dim;
  const Inverse ginv = invert(g(x));
  std::vector<Mat> dg(d);
  for (std::size_t r = 0; r < d; ++r) {
    Vec xp = x, xm = x;
    xp(r) += h;
    xm(r) -= h;
    dg[r] = (g(xp) - g(xm)) / (2.0 * h);
  }
  ChristoffelResult out{Christoffel(d), ginv.condition};
  for (std::size_t l = 0; l < d; ++l) {
    for (std::size_t m = 0; m < d; ++m) {
      for (std::size_t n = m; n < d; ++n) {
        double s = 0.0;
        for (std::size_t r = 0; r < d; ++r)
          s += ginv.inverse(l, r) * (dg[m](n, r) + dg[n](r, m) - dg[r](m, n));
        out.gamma.at(l, m, n) = 0.5 * s;
        out.gamma.at(l, n, m) = 0.5 * s;
      }
    }
  }
  return out;
}

GeodesicPath geodesic_integrate(const MetricField& g, const Vec& x0, const Vec& v0, double tau0,
                                double tau1, std::size_t steps, double h) {
  if (steps < 2) throw std::invalid_argument("geodesic_integrate: steps must be >= 2");
  if (static_cast<std::size_t>(x0.size()) != g.dim || static_cast<std::size_t>(v0.size()) != g.dim)
    throw std::invalid_argument("geodesic_integrate: initial state dimension mismatch");
  const double dt = (tau1 - tau0) / static_cast<double>(steps);
  GeodesicPath path;
  path.step = dt;
  path.samples.push_back({tau0, x0, v0});
  Vec x = x0, v = v0;
  double tau = tau0;

  auto accel = [&](const Vec& xs, const Vec& vs) -> Vec {
    try {
      Vec a = -christoffel(g, xs, h).gamma.contract(vs);
      if (!a.allFinite()) throw std::runtime_error("non-finite acceleration");
      return a;
    } catch (const std::exception& e) {
      throw IntegrationError(std::string("metric evaluation failed: ") + e.what(), tau);
    }
  };
  for (std::size_t k = 0; k < steps; ++k) {
    const Vec k1x = v, k1v = accel(x, v);
    const Vec k2x = v + 0.5 * dt * k1v, k2v = accel(x + 0.5 * dt * k1x, k2x);
    const Vec k3x = v + 0.5 * dt * k2v, k3v = accel(x + 0.5 * dt * k2x, k3x);
    const Vec k4x = v + dt * k3v, k4v = accel(x + dt * k3x, k4x);
    x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    tau = tau0 + static_cast<double>(k + 1) * dt;
    path.samples.push_back({tau, x, v});
  }
  return path;
}

double tangent_norm2(const MetricField& g, const Vec& x, const Vec& v) { return v.dot(g(x) * v); }

Mat jacobian(const VectorMap& f, const Vec& z, double h) {
  const Vec f0 = f(z);
  Mat j(f0.size(), z.size());
  for (Eigen::Index c = 0; c < z.size(); ++c) {
    Vec zp = z, zm = z;
    zp(c) += h;
    zm(c) -= h;
    j.col(c) = (f(zp) - f(zm)) / (2.0 * h);
  }
  return j;
}

Mat pullback_metric(const VectorMap& f, const Vec& z, double h) {
  const Mat j = jacobian(f, z, h);
  Mat g = j.transpose() * j;
  // J^T J is symmetric in exact arithmetic; remove round-off asymmetry
  return 0.5 * (g + g.transpose());
}

double flatness_residual(const Mat& g) {
  if (g.rows() != g.cols() || g.rows() == 0)
    throw std::invalid_argument("flatness_residual: expected a non-empty square matrix");
  const double scale = g.diagonal().mean();
  if (!(scale > 0.0)) throw std::invalid_argument("flatness_residual: non-positive mean diagonal");
  return (g / scale - Mat::Identity(g.rows(), g.cols())).norm();
}

VectorMap transfer_map(nn::Model& model, std::size_t task) {
  return [&model, task](const Vec& z) {
    ad::Tape tape;
    std::mt19937_64 rng(0);
    ad::Matrix row(1, z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) row(0, i) = z(i);
    const auto& m = model.transfer(tape, task, tape.constant(row), rng, false).data();
    Vec out(m.cols());
    for (Eigen::Index i = 0; i < m.cols(); ++i) out(i) = m(0, i);
    return out;
  };
}

}  // namespace gate::geo
