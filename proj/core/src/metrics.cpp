#include "gate/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gate::eval {

namespace {
void check(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  if (a.empty()) throw std::invalid_argument(std::string(op) + ": empty input");
}
}  // namespace

double mse(std::span<const double> y, std::span<const double> y_hat) {
  check(y, y_hat, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

double rmse(std::span<const double> y, std::span<const double> y_hat) {
  return std::sqrt(mse(y, y_hat));
}

double mean(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean: empty input");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  check(a, b, "pearson");
  const double ma = mean(a), mb = mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace gate::eval
