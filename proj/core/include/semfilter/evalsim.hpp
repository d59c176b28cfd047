#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "semfilter/embedding_store.hpp"
#include "semfilter/engine.hpp"
#include "semfilter/planner.hpp"
#include "semfilter/table.hpp"

namespace semfilter {

struct Confusion {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion confusion;
  FilterStats cost;
};

/// Standard confusion-matrix metrics; precision, recall and F1 are 0 when
/// their denominators vanish. The id sets must match exactly.
Metrics compute_metrics(const std::map<RecordId, bool>& predicted,
                        const std::map<RecordId, bool>& truth);
std::string metrics_to_json(const Metrics& metrics);

/// Reads a boolean ground-truth column ("true"/"false"/"1"/"0", any case).
std::map<RecordId, bool> truth_labels(const Table& table, const std::string& column);

struct SyntheticCluster {
  std::size_t size = 0;
  double purity = 1.0;          // Pr[label = true] for members
  std::vector<float> centroid;  // empty: drawn at random, well separated
  double spread = 1.0;          // standard deviation per coordinate
};

struct SyntheticSpec {
  std::vector<SyntheticCluster> clusters;
  std::size_t dim = 16;
  double separation = 10.0;  // scale of randomly drawn centroids
  std::uint64_t seed = 0;

  std::size_t total() const;
};

inline constexpr std::string_view kSyntheticTextColumn = "text";
inline constexpr std::string_view kSyntheticTruthColumn = "truth";
inline constexpr std::string_view kSyntheticPurityColumn = "purity";

struct SyntheticData {
  Table table;  // columns: text, truth, purity, cluster
  EmbeddingSet embeddings;
  std::unordered_map<RecordId, double> purity;  // hidden mock-oracle rule
  std::unordered_map<RecordId, std::size_t> cluster_of;
};

/// Gaussian blobs with Bernoulli(purity) ground truth. Deterministic per seed.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

/// Predicate over the synthetic text column.
Predicate synthetic_predicate();

struct TailCheck {
  std::uint64_t trials = 0;
  std::uint64_t exceedances = 0;
  double frequency = 0.0;
  double analytic_bound = 0.0;
  double mc_sigma = 0.0;  // binomial standard deviation of the frequency estimate

  bool within_bound(double sigmas = 3.0) const {
    return frequency <= analytic_bound + sigmas * mc_sigma;
  }
};

/// Draws `resamples` size-k samples without replacement from a 0/1
/// population of size n with round(mu * n) ones and counts how often
/// |mean_hat - mean| >= epsilon. The analytic bound uses the population
/// variance mean * (1 - mean).
TailCheck bernstein_monte_carlo(std::uint64_t n, double mu, std::uint64_t k, double epsilon,
                                std::uint64_t resamples, std::uint64_t seed);

struct BoundReport {
  std::size_t trials = 0;
  XiPlan plan;
  double xi_used = 0.0;
  double ceiling = 0.0;
  double failure_probability = 0.0;  // 2 l^n for the smallest synthetic cluster

  std::size_t voted_trials = 0;  // trials where at least one tuple was voted
  std::size_t breach_trials = 0;
  double breach_fraction = 0.0;
  double mean_disagreement = 0.0;
  double max_disagreement = 0.0;
  double mean_sampled_disagreement = 0.0;  // sampled tuples vs fresh re-draws
  std::size_t no_vote_clusters = 0;
  std::size_t voted_clusters = 0;
  double mean_llm_calls = 0.0;

  TailCheck tail;  // raw sample means of first-round clusters
};

std::string bound_report_to_json(const BoundReport& report);

/// Runs the filter with a Bernoulli mock oracle across seeded trials and
/// compares voted labels against fresh oracle re-draws. When `params` is
/// given, the sample ratio is planned from it (UniVote or SimVote formula
/// according to cfg.strategy); otherwise cfg.xi is used as is.
BoundReport validate_bound(const SyntheticSpec& spec, const FilterConfig& cfg,
                           const std::optional<PlannerParams>& params, std::size_t trials);

}  // namespace semfilter
