// Prints one PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "semfilter/engine.hpp"
#include "semfilter/evalsim.hpp"
#include "semfilter/planner.hpp"
#include "semfilter/voting.hpp"

using namespace semfilter;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::vector<OracleOutcome> outcomes(std::size_t sample, std::size_t positives) {
  std::vector<OracleOutcome> out;
  for (RecordId i = 0; i < sample; ++i) out.push_back({i, i < positives, 0, 0, OutcomeSource::kMock});
  return out;
}

Outcome golden_example() {
  const auto start = Clock::now();
  std::vector<RecordId> cluster(1000), sampled(101);
  for (RecordId i = 0; i < 1000; ++i) cluster[i] = i;
  for (RecordId i = 0; i < 101; ++i) sampled[i] = i;
  const Thresholds th{0.15, 0.85};
  const VoteReport high = uni_vote(outcomes(101, 100), cluster, sampled, th);
  const VoteReport mid = uni_vote(outcomes(101, 81), cluster, sampled, th);
  const bool high_ok = high.positives.size() == 899 && high.undetermined.empty() &&
                       high.negatives.empty() && high.scores.at(500) == 100.0 / 101.0;
  const bool mid_ok = mid.undetermined.size() == 899 && mid.scores.at(500) == 81.0 / 101.0;

  // 81/101 inside the engine: the undetermined cluster is re-clustered.
  SyntheticSpec spec;
  spec.clusters = {{1000, 1.0, {}, 1.0}};
  spec.seed = 5;
  const SyntheticData data = gen_synthetic(spec);
  // The first 101 calls are the depth-0 sample: 81 answer True, 20 False.
  class Counted : public OracleBackend {
   public:
    OracleReply evaluate(const Predicate&, const Record&) override {
      const int n = ++calls_;
      return {n <= 81 || n > 101, 0, 0};
    }
    OutcomeSource source() const override { return OutcomeSource::kMock; }

   private:
    std::atomic<int> calls_{0};
  };
  FilterConfig cfg;
  cfg.k = 1;
  LabelOracle oracle(std::make_shared<Counted>());
  const FilterResult r = semantic_filter(data.table, data.embeddings, synthetic_predicate(), cfg, oracle);
  const bool reclustered = !r.nodes.empty() && r.nodes.front().report &&
                           r.nodes.front().report->undetermined.size() == 899 && r.stats.recluster_rounds >= 1;
  const double t = seconds_since(start);
  return {high_ok && mid_ok && reclustered && t < 1.0,
          fmt("100/101 -> %zu True (score %.4f); 81/101 -> %zu undetermined (score %.4f), "
              "recluster_rounds=%d; %.3fs",
              high.positives.size(), high.scores.at(500), mid.undetermined.size(), mid.scores.at(500),
              r.stats.recluster_rounds, t)};
}

Outcome call_counts() {
  SyntheticSpec pure;
  pure.clusters = {{12500, 1.0, {}, 1.0}, {12500, 1.0, {}, 1.0}, {12500, 0.0, {}, 1.0}, {12500, 0.0, {}, 1.0}};
  pure.seed = 1;
  const SyntheticData a = gen_synthetic(pure);
  LabelOracle oa(std::make_shared<ColumnOracle>("truth"));
  const FilterResult ra = semantic_filter(a.table, a.embeddings, synthetic_predicate(), {}, oa);

  SyntheticSpec even;
  even.clusters = {{50000, 0.5, {}, 1.0}};
  even.seed = 2;
  const SyntheticData b = gen_synthetic(even);
  FilterConfig cfg;
  cfg.max_depth = 0;
  LabelOracle ob(std::make_shared<ColumnOracle>("truth"));
  const FilterResult rb = semantic_filter(b.table, b.embeddings, synthetic_predicate(), cfg, ob);
  return {ra.stats.llm_calls == 404 && rb.stats.llm_calls == b.table.size(),
          fmt("pure: %llu calls (want 404); 50/50 max_depth=0: %llu calls (want %zu)",
              static_cast<unsigned long long>(ra.stats.llm_calls),
              static_cast<unsigned long long>(rb.stats.llm_calls), b.table.size())};
}

Outcome tail_validity() {
  const auto start = Clock::now();
  int ok = 0, total = 0;
  std::string worst;
  double worst_margin = 1e9;
  std::uint64_t seed = 0;
  for (double mu : {0.5, 0.9, 0.99}) {
    for (std::uint64_t k : {50, 100, 200}) {
      for (double eps : {0.05, 0.1, 0.2}) {
        const TailCheck c = bernstein_monte_carlo(1000, mu, k, eps, 10000, ++seed);
        ++total;
        if (c.within_bound()) ++ok;
        // Tightest non-vacuous point: highest frequency relative to its allowance.
        const double allowance = c.analytic_bound + 3 * c.mc_sigma;
        const double margin = allowance > 0.0 && c.analytic_bound < 1.0 ? -c.frequency / allowance : 0.0;
        if (margin < worst_margin) {
          worst_margin = margin;
          worst = fmt("mu=%.2f k=%llu eps=%.2f freq=%.4f bound=%.4f", mu, static_cast<unsigned long long>(k),
                      eps, c.frequency, c.analytic_bound);
        }
      }
    }
  }
  const double t = seconds_since(start);
  return {ok == total && t < 120.0, fmt("%d/%d grid points within bound; tightest %s; %.2fs", ok, total,
                                        worst.c_str(), t)};
}

Outcome ceiling_validation() {
  SyntheticSpec spec;
  spec.clusters = {{14608, 0.9942, {}, 1.0}};
  spec.seed = 4;
  FilterConfig cfg;
  cfg.k = 1;
  cfg.min_sample = 1;
  PlannerParams p;
  p.epsilon = 0.10;
  p.failure_base = 0.9996;
  p.sigma_hat_sq = 0.005766;
  const BoundReport r = validate_bound(spec, cfg, p, 200);
  const double within =
      r.voted_trials == 0 ? 0.0 : 1.0 - static_cast<double>(r.breach_trials) / static_cast<double>(r.voted_trials);
  return {r.voted_trials > 0 && within >= 0.99,
          fmt("xi=%.6f; %zu/200 trials voted; %.1f%% within ceiling %.2f; mean disagreement %.4f "
              "(1-purity=0.0058), max %.4f",
              r.xi_used, r.voted_trials, 100 * within, r.ceiling, r.mean_disagreement, r.max_disagreement)};
}

Outcome planner_shape() {
  bool monotone = true, ratio_ok = true;
  double prev = 2.0;
  std::string ratios;
  for (double eps : {0.10, 0.15, 0.20, 0.25, 0.30}) {
    PlannerParams p;
    p.epsilon = eps;
    p.sigma_hat_sq = 0.005766;
    p.failure_base = 0.9996;
    p.skew = 2.0;
    const double uni = xi_univote(p).xi, sim = xi_simvote(p).xi;
    monotone = monotone && uni <= prev;
    prev = uni;
    const double ratio = sim / uni;
    ratio_ok = ratio_ok && ratio >= 1.8 && ratio <= 2.2;
    ratios += fmt("%s%.2f:%.3f/%.3f", ratios.empty() ? "" : " ", eps, 1000 * uni, 1000 * sim);
  }
  return {monotone && ratio_ok, "eps:xi_uni/xi_sim per mille " + ratios};
}

Outcome vote_equivalence() {
  Rng rng(99);
  int same = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t size = 2 + rng.uniform_below(500);
    const std::size_t sample = 1 + rng.uniform_below(size - 1);
    std::vector<RecordId> cluster(size), sampled;
    for (RecordId i = 0; i < size; ++i) cluster[i] = i * 5 + 1;
    Rng pick(t);
    sampled = sample_without_replacement(std::span<const RecordId>(cluster), sample, pick);
    std::sort(sampled.begin(), sampled.end());
    std::vector<OracleOutcome> o;
    for (RecordId id : sampled) o.push_back({id, rng.uniform01() < 0.7, 0, 0, OutcomeSource::kMock});
    const double c = 1e-3 + rng.uniform01() * 100.0;
    const Thresholds th = Thresholds::symmetric(0.01 + 0.48 * rng.uniform01());
    const VoteReport u = uni_vote(o, cluster, sampled, th);
    const VoteReport s = sim_vote(o, cluster, sampled, th, [c](RecordId, RecordId) { return c; });
    if (u == s) ++same;
  }
  return {same == 100, fmt("%d/100 fixtures identical", same)};
}

Outcome fallback_exactness() {
  SyntheticSpec spec;
  spec.clusters = {{2000, 0.95, {}, 1.0}, {1500, 0.7, {}, 1.0}, {1000, 0.5, {}, 1.0}, {800, 0.05, {}, 1.0}};
  spec.seed = 8;
  const SyntheticData data = gen_synthetic(spec);
  const auto truth = truth_labels(data.table, "truth");
  std::size_t checked = 0, wrong = 0, configs = 0;
  for (auto strategy : {VoteStrategy::kUni, VoteStrategy::kSim}) {
    for (double lambda : {1.0, 0.5}) {
      for (int depth : {0, 1, 3}) {
        FilterConfig cfg;
        cfg.strategy = strategy;
        cfg.distance.lambda = lambda;
        cfg.max_depth = depth;
        cfg.k = 3;
        cfg.xi = 0.02;
        cfg.min_sample = 30;
        cfg.seed = ++configs;
        LabelOracle oracle(std::make_shared<ColumnOracle>("truth"));
        const FilterResult r = semantic_filter(data.table, data.embeddings, synthetic_predicate(), cfg, oracle);
        for (const auto& [id, provenance] : r.provenance) {
          if (provenance == Provenance::kVote) continue;
          ++checked;
          if (r.labels.at(id) != truth.at(id)) ++wrong;
        }
      }
    }
  }
  SyntheticSpec even;
  even.clusters = {{20000, 0.5, {}, 1.0}};
  even.seed = 3;
  const SyntheticData e = gen_synthetic(even);
  FilterConfig cfg;
  cfg.max_depth = 0;
  LabelOracle oracle(std::make_shared<ColumnOracle>("truth"));
  const FilterResult r = semantic_filter(e.table, e.embeddings, synthetic_predicate(), cfg, oracle);
  const Metrics m = compute_metrics(r.labels, truth_labels(e.table, "truth"));
  return {wrong == 0 && checked > 0 && m.accuracy == 1.0 && m.f1 == 1.0,
          fmt("%zu configs, %zu direct labels, %zu mismatches; full fallback accuracy=%.3f f1=%.3f", configs,
              checked, wrong, m.accuracy, m.f1)};
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("semfilter-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto path = [&](const char* name) { return (dir / name).string(); };
  std::ostringstream sink;
  auto cli_run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  bool ok = cli_run({"simulate", "--clusters", "4000:0.95,3000:0.6,3000:0.1", "--trials", "0", "--seed", "11",
                     "--write-fixture", dir.string()}) == 0;
  std::string results[3], manifests[3];
  for (int i = 0; i < 3; ++i) {
    std::vector<std::string> args = {"filter", "--table", path("table.jsonl"), "--embeddings",
                                     path("embeddings.bin"), "--predicate", "The {text} matches the target concept.",
                                     "--strategy", "sim", "--lambda", "0.7", "--mock-kind", "bernoulli", "--seed", "21",
                                     "--k", "3", "--xi", "0.02", "--out", path("result.jsonl"), "--manifest",
                                     path("manifest.json")};
    if (i == 2) args = {"filter", "--replay", path("manifest.json"), "--out", path("result.jsonl"), "--manifest",
                        path("manifest.json")};
    ok = ok && cli_run(args) == 0;
    results[i] = read_file(path("result.jsonl"));
    manifests[i] = read_file(path("manifest.json"));
  }
  fs::remove_all(dir);
  const bool same = ok && !results[0].empty() && results[0] == results[1] && results[1] == results[2] &&
                    manifests[0] == manifests[1] && manifests[1] == manifests[2];
  return {same, fmt("two runs + replay: results %s, manifests %s (result %s)",
                    results[0] == results[1] && results[1] == results[2] ? "identical" : "differ",
                    manifests[0] == manifests[1] && manifests[1] == manifests[2] ? "identical" : "differ",
                    git_blob_sha1(results[0]).c_str())};
}

Outcome serialization() {
  const auto start = Clock::now();
  Rng rng(1024);
  EmbeddingSet set(1024);
  std::vector<float> v(1024);
  for (RecordId i = 0; i < 10000; ++i) {
    for (auto& x : v) x = static_cast<float>(rng.normal());
    set.insert(rng.next_u64() >> 1, v);
  }
  const std::string bytes = serialize_embeddings(set);
  const EmbeddingSet back = deserialize_embeddings(bytes);
  const bool same = back == set && serialize_embeddings(back) == bytes;
  const double t = seconds_since(start);
  return {same && t < 5.0, fmt("10000 x 1024 floats, %zu bytes, bit-exact=%s; %.2fs", bytes.size(),
                               same ? "yes" : "no", t)};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"golden example", golden_example},
      {"call counts", call_counts},
      {"tail validity", tail_validity},
      {"error ceiling", ceiling_validation},
      {"planner monotonicity and ratio", planner_shape},
      {"sim/uni vote equivalence", vote_equivalence},
      {"fallback exactness", fallback_exactness},
      {"determinism and replay", determinism},
      {"embedding serialization", serialization},
  };
  int failures = 0, index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    Outcome o;
    const auto start = Clock::now();
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
