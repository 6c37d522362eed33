#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gate/data.hpp"
#include "gate/dmpnn.hpp"
#include "gate/networks.hpp"
#include "gate/smiles.hpp"
#include "gate/training.hpp"

using namespace gate;

namespace {

ad::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ad::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

struct Molecules {
  std::vector<chem::MolGraph> graphs;
  std::vector<double> labels;
  nn::GraphBatch batch;

  explicit Molecules(std::size_t n) {
    data::SynthConfig sc;
    sc.n_target = n;
    sc.n_source = 4;
    for (const auto& r : data::synth_pair(sc).first.records) {
      graphs.push_back(chem::load_molecule(r.smiles));
      labels.push_back(r.value);
    }
    std::vector<const chem::MolGraph*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    batch = nn::GraphBatch::from(ptrs);
  }
};

}  // namespace

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = state.range(0);
  std::mt19937_64 rng(1);
  const ad::Matrix a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) {
    ad::Tape t;
    ad::Value out = ad::sum(ad::matmul(t.variable(a), t.variable(b)));
    t.backward(out);
    benchmark::DoNotOptimize(out.item());
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(16, 256)->Complexity();

static void BM_SmilesParse(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(chem::load_molecule("CC(=O)Nc1ccc(O)cc1C1CCN(C)CC1"));
}
BENCHMARK(BM_SmilesParse);

static void BM_DmpnnForward(benchmark::State& state) {
  const Molecules mols(static_cast<std::size_t>(state.range(0)));
  std::mt19937_64 rng(2);
  nn::Dmpnn net(nn::NetworkConfig::quartered().embedding, rng, "embed");
  for (auto _ : state) {
    ad::Tape t;
    benchmark::DoNotOptimize(net.forward(t, mols.batch).pooled.data()(0, 0));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DmpnnForward)->Arg(16)->Arg(64);

static void BM_GateStep(benchmark::State& state) {
  const Molecules mols(16);
  nn::Model model(nn::ModelKind::Gate, nn::NetworkConfig::quartered(), 3);
  train::TrainConfig cfg;
  cfg.perturb.count = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  for (auto _ : state) {
    ad::Tape t;
    model.zero_grad();
    auto b = train::gate_losses(t, model, 0, mols.batch, mols.labels, cfg, rng, true);
    t.backward(b.total);
    benchmark::DoNotOptimize(b.total.item());
  }
}
BENCHMARK(BM_GateStep)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
