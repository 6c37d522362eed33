#include "gate/losses.hpp"

#include <cmath>
#include <vector>

namespace gate::loss {

using ad::Value;

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma, delta})
    if (!std::isfinite(w) || w < 0.0)
      throw ad::ParameterError("loss weights must be finite and non-negative");
}

std::string to_string(ConsistencyMode m) {
  return m == ConsistencyMode::Paired ? "paired" : "algorithm-literal";
}
std::string to_string(DistanceMode m) { return m == DistanceMode::Vector ? "vector" : "scalar"; }

ConsistencyMode consistency_mode_from_string(const std::string& s) {
  if (s == "paired") return ConsistencyMode::Paired;
  if (s == "algorithm-literal") return ConsistencyMode::AlgorithmLiteral;
  throw ad::ParameterError("unknown consistency mode '" + s + "'");
}

DistanceMode distance_mode_from_string(const std::string& s) {
  if (s == "vector") return DistanceMode::Vector;
  if (s == "scalar") return DistanceMode::Scalar;
  throw ad::ParameterError("unknown distance mode '" + s + "'");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"delta", w.delta}};
}
void from_json(const nlohmann::json& j, LossWeights& w) {
  w.alpha = j.value("alpha", w.alpha);
  w.beta = j.value("beta", w.beta);
  w.gamma = j.value("gamma", w.gamma);
  w.delta = j.value("delta", w.delta);
}

namespace {

void check_set(const PerturbedSet& s, Value pivot, const char* op) {
  if (s.count == 0 || s.stacked.rows() != s.count * pivot.rows() ||
      s.stacked.cols() != pivot.cols())
    throw ad::DimensionError(std::string(op) + ": perturbation set " + s.stacked.shape().str() +
                             " with M=" + std::to_string(s.count) + " does not match pivots " +
                             pivot.shape().str());
}

void check_pair(const PerturbedSet& a, const PerturbedSet& b, const char* op) {
  if (a.count != b.count)
    throw ad::DimensionError(std::string(op) + ": perturbation counts differ (" +
                             std::to_string(a.count) + " vs " + std::to_string(b.count) + ")");
}

// pivot repeated once per perturbation block
Value tile(Value pivot, std::size_t count) {
  std::vector<int> idx;
  idx.reserve(pivot.rows() * count);
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t i = 0; i < pivot.rows(); ++i) idx.push_back(static_cast<int>(i));
  return ad::gather_rows(pivot, idx);
}

}  // namespace

Value loss_reg(Value y, Value y_hat) { return ad::mse(y_hat, y); }

Value loss_auto(Value z, Value z_hat) { return ad::mse(z_hat, z); }

Value loss_map(Value y, Value y_cross) { return ad::mse(y_cross, y); }

Value loss_cons(Value m_t, Value m_s, const PerturbedSet& bar_t, const PerturbedSet& bar_s,
                ConsistencyMode mode) {
  if (m_t.shape() != m_s.shape())
    throw ad::DimensionError("loss_cons: pivot shapes " + m_t.shape().str() + " vs " +
                             m_s.shape().str());
  check_pair(bar_t, bar_s, "loss_cons");
  check_set(bar_t, m_t, "loss_cons");
  check_set(bar_s, m_s, "loss_cons");
  if (mode == ConsistencyMode::AlgorithmLiteral)
    return ad::mse(bar_t.stacked, tile(m_s, bar_s.count));
  // equal block sizes: the mean over all blocks is the mean of per-block MSEs
  return ad::add(ad::mse(m_t, m_s), ad::mse(bar_t.stacked, bar_s.stacked));
}

Value loss_dist(Value m_t, const PerturbedSet& bar_t, Value m_s, const PerturbedSet& bar_s,
                DistanceMode mode) {
  if (m_t.shape() != m_s.shape())
    throw ad::DimensionError("loss_dist: pivot shapes " + m_t.shape().str() + " vs " +
                             m_s.shape().str());
  check_pair(bar_t, bar_s, "loss_dist");
  check_set(bar_t, m_t, "loss_dist");
  check_set(bar_s, m_s, "loss_dist");
  Value disp_t = ad::sub(tile(m_t, bar_t.count), bar_t.stacked);
  Value disp_s = ad::sub(tile(m_s, bar_s.count), bar_s.stacked);
  if (mode == DistanceMode::Scalar) return ad::mse(ad::row_norms(disp_t), ad::row_norms(disp_s));
  return ad::mse(disp_t, disp_s);
}

Value loss_total(const LossBundle& parts, const LossWeights& w) {
  w.validate();
  Value total = parts.reg;
  auto term = [&](Value v, double weight) {
    if (weight == 0.0 || !v.valid()) return;
    total = ad::add(total, weight == 1.0 ? v : ad::scale(v, weight));
  };
  term(parts.autoenc, w.alpha);
  term(parts.map, w.beta);
  term(parts.cons, w.gamma);
  term(parts.dist, w.delta);
  return total;
}

LossValues& LossValues::operator+=(const LossValues& o) {
  reg += o.reg;
  autoenc += o.autoenc;
  map += o.map;
  cons += o.cons;
  dist += o.dist;
  total += o.total;
  return *this;
}

LossValues LossValues::scaled(double c) const {
  return {reg * c, autoenc * c, map * c, cons * c, dist * c, total * c};
}

LossValues values_of(const LossBundle& b) {
  auto v = [](const Value& x) { return x.valid() ? x.item() : 0.0; };
  return {v(b.reg), v(b.autoenc), v(b.map), v(b.cons), v(b.dist), v(b.total)};
}

void to_json(nlohmann::json& j, const LossValues& v) {
  j = {{"reg", v.reg},   {"auto", v.autoenc}, {"map", v.map},
       {"cons", v.cons}, {"dist", v.dist},    {"total", v.total}};
}

}  // namespace gate::loss
