#include <benchmark/benchmark.h>

#include "semfilter/clustering.hpp"
#include "semfilter/evalsim.hpp"
#include "semfilter/voting.hpp"

using namespace semfilter;

namespace {

const SyntheticData& blobs(std::size_t n) {
  static std::map<std::size_t, SyntheticData> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    SyntheticSpec spec;
    for (int c = 0; c < 4; ++c) spec.clusters.push_back({n / 4, 0.9, {}, 1.0});
    spec.dim = 64;
    it = cache.emplace(n, gen_synthetic(spec)).first;
  }
  return it->second;
}

void BM_KMeans(benchmark::State& state) {
  const SyntheticData& data = blobs(static_cast<std::size_t>(state.range(0)));
  const auto ids = data.embeddings.ids();
  KMeansOptions options;
  options.k = 4;
  for (auto _ : state) {
    benchmark::DoNotOptimize(kmeans(ids, data.embeddings, options));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_KMeans)->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);

void BM_SimVote(benchmark::State& state) {
  const SyntheticData& data = blobs(10000);
  std::vector<RecordId> cluster(data.embeddings.ids().begin(), data.embeddings.ids().begin() + 2500);
  std::vector<RecordId> sampled(cluster.begin(), cluster.begin() + state.range(0));
  std::vector<OracleOutcome> outcomes;
  for (RecordId id : sampled) outcomes.push_back({id, id % 3 != 0, 0, 0, OutcomeSource::kMock});
  const HybridDistance metric(data.embeddings, nullptr, {}, cluster, sampled);
  SimilarityFn sim = [&metric](RecordId a, RecordId b) { return similarity_from_distance(metric(a, b)); };
  for (auto _ : state) {
    benchmark::DoNotOptimize(sim_vote(outcomes, cluster, sampled, {0.15, 0.85}, sim));
  }
}
BENCHMARK(BM_SimVote)->Arg(25)->Arg(101)->Unit(benchmark::kMillisecond);

void BM_TailMonteCarlo(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(bernstein_monte_carlo(1000, 0.9, static_cast<std::uint64_t>(state.range(0)), 0.1,
                                                   10000, 1));
  }
}
BENCHMARK(BM_TailMonteCarlo)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
