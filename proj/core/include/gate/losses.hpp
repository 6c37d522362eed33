#pragma once

// Alignment objective: regression, autoencoder, mapping, consistency and
// distance losses plus their weighted total.
//
// Perturbation sets are passed stacked: a [M*N x L] matrix whose block j
// (rows j*N .. j*N+N-1) holds the j-th perturbation of all N pivots.

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "gate/autodiff.hpp"

namespace gate::loss {

/// Weights are bound by name: alpha -> autoencoder, beta -> mapping,
/// gamma -> consistency, delta -> distance.
struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double delta = 1.0;

  void validate() const;
};

enum class ConsistencyMode { Paired, AlgorithmLiteral };
enum class DistanceMode { Vector, Scalar };

std::string to_string(ConsistencyMode m);
std::string to_string(DistanceMode m);
ConsistencyMode consistency_mode_from_string(const std::string& s);
DistanceMode distance_mode_from_string(const std::string& s);

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Stacked perturbation set with its multiplicity.
struct PerturbedSet {
  ad::Value stacked;  // [count * pivots x width]
  std::size_t count = 0;
};

ad::Value loss_reg(ad::Value y, ad::Value y_hat);
ad::Value loss_auto(ad::Value z, ad::Value z_hat);
ad::Value loss_map(ad::Value y, ad::Value y_cross);
ad::Value loss_cons(ad::Value m_t, ad::Value m_s, const PerturbedSet& bar_t,
                    const PerturbedSet& bar_s, ConsistencyMode mode = ConsistencyMode::Paired);
ad::Value loss_dist(ad::Value m_t, const PerturbedSet& bar_t, ad::Value m_s,
                    const PerturbedSet& bar_s, DistanceMode mode = DistanceMode::Vector);

struct LossBundle {
  ad::Value reg;
  ad::Value autoenc;
  ad::Value map;
  ad::Value cons;
  ad::Value dist;
  ad::Value total;
};

/// total = reg + alpha*auto + beta*map + gamma*cons + delta*dist.
/// Terms with zero weight are left off the graph.
ad::Value loss_total(const LossBundle& parts, const LossWeights& w);

/// Plain scalar components, convenient for logging.
struct LossValues {
  double reg = 0, autoenc = 0, map = 0, cons = 0, dist = 0, total = 0;
  LossValues& operator+=(const LossValues& o);
  LossValues scaled(double c) const;
};
LossValues values_of(const LossBundle& b);
void to_json(nlohmann::json& j, const LossValues& v);

}  // namespace gate::loss
