#include "semfilter/evalsim.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <json.hpp>

namespace semfilter {

using json = nlohmann::json;

Metrics compute_metrics(const std::map<RecordId, bool>& predicted,
                        const std::map<RecordId, bool>& truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorKind::kInvalidArgument, "predicted and truth cover different id sets");
  }
  Metrics m;
  auto t = truth.begin();
  for (auto p = predicted.begin(); p != predicted.end(); ++p, ++t) {
    if (p->first != t->first) {
      throw Error(ErrorKind::kInvalidArgument,
                  "id " + std::to_string(p->first) + " has no ground-truth label");
    }
    if (p->second && t->second) ++m.confusion.tp;
    else if (p->second && !t->second) ++m.confusion.fp;
    else if (!p->second && t->second) ++m.confusion.fn;
    else ++m.confusion.tn;
  }
  const auto& c = m.confusion;
  const double total = static_cast<double>(c.tp + c.fp + c.tn + c.fn);
  m.accuracy = total > 0 ? static_cast<double>(c.tp + c.tn) / total : 0.0;
  m.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  m.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

std::string metrics_to_json(const Metrics& m) {
  json j = {
      {"accuracy", m.accuracy},
      {"precision", m.precision},
      {"recall", m.recall},
      {"f1", m.f1},
      {"confusion", {{"tp", m.confusion.tp}, {"fp", m.confusion.fp},
                     {"tn", m.confusion.tn}, {"fn", m.confusion.fn}}},
      {"cost", json::parse(stats_to_json(m.cost))},
  };
  return j.dump();
}

std::map<RecordId, bool> truth_labels(const Table& table, const std::string& column) {
  std::map<RecordId, bool> out;
  for (const auto& record : table.records()) {
    const std::string* value = record.find(column);
    if (value == nullptr) {
      throw Error(ErrorKind::kMissingColumn, "record " + std::to_string(record.id) +
                                                 " has no truth column '" + column + "'");
    }
    std::string v = *value;
    for (char& ch : v) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (v == "true" || v == "1") out[record.id] = true;
    else if (v == "false" || v == "0") out[record.id] = false;
    else {
      throw Error(ErrorKind::kParse, "record " + std::to_string(record.id) + ": truth value '" +
                                         *value + "' is not boolean");
    }
  }
  return out;
}

std::size_t SyntheticSpec::total() const {
  std::size_t n = 0;
  for (const auto& c : clusters) n += c.size;
  return n;
}

namespace {

std::string shortest(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  if (spec.dim == 0) throw Error(ErrorKind::kInvalidArgument, "synthetic dim must be positive");
  SyntheticData data;
  data.embeddings = EmbeddingSet(spec.dim);
  data.table = Table({std::string(kSyntheticTextColumn), std::string(kSyntheticTruthColumn),
                      std::string(kSyntheticPurityColumn), "cluster"});
  RecordId next_id = 0;
  std::vector<float> point(spec.dim);
  for (std::size_t c = 0; c < spec.clusters.size(); ++c) {
    const auto& cluster = spec.clusters[c];
    if (!(cluster.purity >= 0.0 && cluster.purity <= 1.0)) {
      throw Error(ErrorKind::kInvalidArgument, "cluster purity must lie in [0, 1]");
    }
    std::vector<double> centroid(spec.dim);
    if (cluster.centroid.empty()) {
      Rng centroid_rng(derive_seed(spec.seed, 0x63656e74ULL, c));
      for (auto& x : centroid) x = spec.separation * centroid_rng.normal();
    } else {
      if (cluster.centroid.size() != spec.dim) {
        throw Error(ErrorKind::kDimensionMismatch, "centroid length differs from dim");
      }
      std::copy(cluster.centroid.begin(), cluster.centroid.end(), centroid.begin());
    }
    Rng rng(derive_seed(spec.seed, 0x706f696eULL, c));
    for (std::size_t i = 0; i < cluster.size; ++i) {
      const RecordId id = next_id++;
      for (std::size_t d = 0; d < spec.dim; ++d) {
        point[d] = static_cast<float>(centroid[d] + cluster.spread * rng.normal());
      }
      const bool label = rng.uniform01() < cluster.purity;
      std::string text = "topic" + std::to_string(c);
      for (int w = 0; w < 8; ++w) {
        text += " w" + std::to_string(c) + "_" + std::to_string(rng.uniform_below(50));
      }
      Record record;
      record.id = id;
      record.columns = {{std::string(kSyntheticTextColumn), std::move(text)},
                        {std::string(kSyntheticTruthColumn), label ? "true" : "false"},
                        {std::string(kSyntheticPurityColumn), shortest(cluster.purity)},
                        {"cluster", std::to_string(c)}};
      data.table.add(std::move(record));
      data.embeddings.insert(id, point);
      data.purity[id] = cluster.purity;
      data.cluster_of[id] = c;
    }
  }
  return data;
}

Predicate synthetic_predicate() { return Predicate("The {text} matches the target concept."); }

TailCheck bernstein_monte_carlo(std::uint64_t n, double mu, std::uint64_t k, double epsilon,
                                std::uint64_t resamples, std::uint64_t seed) {
  if (k < 1 || k > n) throw Error(ErrorKind::kInvalidArgument, "need 1 <= k <= n");
  const auto ones = static_cast<std::uint64_t>(std::llround(mu * static_cast<double>(n)));
  const double mean = static_cast<double>(ones) / static_cast<double>(n);
  std::vector<std::uint8_t> population(n, 0);
  std::fill_n(population.begin(), ones, 1);

  Rng rng(seed);
  TailCheck check;
  check.trials = resamples;
  for (std::uint64_t t = 0; t < resamples; ++t) {
    // Partial Fisher-Yates; the array stays a permutation across resamples.
    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < k; ++i) {
      const std::uint64_t j = i + rng.uniform_below(n - i);
      std::swap(population[i], population[j]);
      hits += population[i];
    }
    const double mean_hat = static_cast<double>(hits) / static_cast<double>(k);
    if (std::abs(mean_hat - mean) >= epsilon - 1e-12) ++check.exceedances;
  }
  check.frequency = static_cast<double>(check.exceedances) / static_cast<double>(resamples);
  check.analytic_bound = bernstein_tail(k, n, epsilon, mean * (1.0 - mean), 1.0);
  const double b = std::clamp(check.analytic_bound, 0.0, 1.0);
  check.mc_sigma = std::sqrt(b * (1.0 - b) / static_cast<double>(resamples));
  return check;
}

std::string bound_report_to_json(const BoundReport& r) {
  json j = {
      {"trials", r.trials},
      {"plan", {{"feasible", r.plan.feasible}, {"xi", r.plan.xi}, {"radicand", r.plan.radicand}}},
      {"xi_used", r.xi_used},
      {"ceiling", r.ceiling},
      {"failure_probability", r.failure_probability},
      {"voted_trials", r.voted_trials},
      {"breach_trials", r.breach_trials},
      {"breach_fraction", r.breach_fraction},
      {"mean_disagreement", r.mean_disagreement},
      {"max_disagreement", r.max_disagreement},
      {"mean_sampled_disagreement", r.mean_sampled_disagreement},
      {"voted_clusters", r.voted_clusters},
      {"no_vote_clusters", r.no_vote_clusters},
      {"mean_llm_calls", r.mean_llm_calls},
      {"tail",
       {{"samples", r.tail.trials},
        {"exceedances", r.tail.exceedances},
        {"frequency", r.tail.frequency},
        {"analytic_bound", r.tail.analytic_bound},
        {"mc_sigma", r.tail.mc_sigma}}},
  };
  return j.dump();
}

BoundReport validate_bound(const SyntheticSpec& spec, const FilterConfig& cfg,
                           const std::optional<PlannerParams>& params, std::size_t trials) {
  if (trials < 1) throw Error(ErrorKind::kInvalidArgument, "trials must be at least 1");
  const SyntheticData data = gen_synthetic(spec);
  const Predicate predicate = synthetic_predicate();

  BoundReport report;
  report.trials = trials;
  FilterConfig run_cfg = cfg;
  const PlannerParams planner = params.value_or(PlannerParams{});
  if (params) {
    report.plan = cfg.strategy == VoteStrategy::kSim ? xi_simvote(*params) : xi_univote(*params);
    if (!report.plan.feasible) {
      run_cfg.xi = 1.0;
    } else if (report.plan.xi > 0.0) {
      run_cfg.xi = report.plan.xi;
    }
  }
  report.xi_used = run_cfg.xi;
  report.ceiling = error_ceiling(cfg.thresholds, planner.epsilon);
  std::size_t smallest = SIZE_MAX;
  for (const auto& c : spec.clusters) smallest = std::min(smallest, c.size);
  report.failure_probability =
      smallest == SIZE_MAX ? 1.0 : failure_probability(planner.failure_base, smallest);

  double disagreement_sum = 0.0;
  double sampled_sum = 0.0;
  std::size_t sampled_trials = 0;
  double bound_sum = 0.0;
  double calls_sum = 0.0;

  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = derive_seed(spec.seed, 0x747269616cULL, t);
    run_cfg.seed = trial_seed;
    auto backend = std::make_shared<BernoulliOracle>(trial_seed, data.purity, 0);
    OracleConfig oracle_cfg;
    oracle_cfg.parallelism = 1;
    LabelOracle oracle(backend, oracle_cfg);
    const FilterResult result = semantic_filter(data.table, data.embeddings, predicate, run_cfg, oracle);
    calls_sum += static_cast<double>(result.stats.llm_calls);

    std::size_t voted = 0, voted_wrong = 0, sampled = 0, sampled_wrong = 0;
    for (const auto& [id, provenance] : result.provenance) {
      const bool fresh = backend->draw_label(id, 1);
      const bool label = result.labels.at(id);
      if (provenance == Provenance::kVote) {
        ++voted;
        if (label != fresh) ++voted_wrong;
      } else if (provenance == Provenance::kOracle) {
        ++sampled;
        if (label != fresh) ++sampled_wrong;
      }
    }
    if (voted > 0) {
      const double rate = static_cast<double>(voted_wrong) / static_cast<double>(voted);
      ++report.voted_trials;
      disagreement_sum += rate;
      report.max_disagreement = std::max(report.max_disagreement, rate);
      if (rate > report.ceiling) ++report.breach_trials;
    }
    if (sampled > 0) {
      sampled_sum += static_cast<double>(sampled_wrong) / static_cast<double>(sampled);
      ++sampled_trials;
    }

    for (const auto& node : result.nodes) {
      if (node.depth != 0 || !node.report) continue;
      const auto& rep = *node.report;
      if (rep.positives.empty() && rep.negatives.empty()) ++report.no_vote_clusters;
      else ++report.voted_clusters;

      std::size_t positives = 0;
      for (const auto& o : node.outcomes) positives += o.label ? 1 : 0;
      std::size_t population_positives = 0;
      for (RecordId id : node.ids) population_positives += backend->draw_label(id, 0) ? 1 : 0;
      const double mean_hat = static_cast<double>(positives) / static_cast<double>(node.outcomes.size());
      const double mean = static_cast<double>(population_positives) / static_cast<double>(node.ids.size());
      ++report.tail.trials;
      if (std::abs(mean_hat - mean) >= planner.epsilon) ++report.tail.exceedances;
      bound_sum += bernstein_tail(node.outcomes.size(), node.ids.size(), planner.epsilon,
                                  planner.sigma_hat_sq, planner.r_bound);
    }
  }

  if (report.voted_trials > 0) {
    report.mean_disagreement = disagreement_sum / static_cast<double>(report.voted_trials);
    report.breach_fraction =
        static_cast<double>(report.breach_trials) / static_cast<double>(report.voted_trials);
  }
  if (sampled_trials > 0) report.mean_sampled_disagreement = sampled_sum / static_cast<double>(sampled_trials);
  report.mean_llm_calls = calls_sum / static_cast<double>(trials);
  if (report.tail.trials > 0) {
    const double count = static_cast<double>(report.tail.trials);
    report.tail.frequency = static_cast<double>(report.tail.exceedances) / count;
    report.tail.analytic_bound = bound_sum / count;
    const double b = std::clamp(report.tail.analytic_bound, 0.0, 1.0);
    report.tail.mc_sigma = std::sqrt(b * (1.0 - b) / count);
  }
  return report;
}

}  // namespace semfilter
