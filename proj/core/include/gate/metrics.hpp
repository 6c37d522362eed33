#pragma once

#include <span>

namespace gate::eval {

double mse(std::span<const double> y, std::span<const double> y_hat);
double rmse(std::span<const double> y, std::span<const double> y_hat);
double mean(std::span<const double> v);
/// Population standard deviation.
double stddev(std::span<const double> v);
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace gate::eval
