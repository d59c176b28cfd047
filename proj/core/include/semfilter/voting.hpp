#pragma once

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "semfilter/oracle.hpp"
#include "semfilter/util.hpp"

namespace semfilter {

/// Vote confidence bounds. Scores >= ub vote True, <= lb vote False,
/// anything strictly between is undetermined.
struct Thresholds {
  double lb = 0.15;
  double ub = 0.85;

  static Thresholds symmetric(double lb) { return {lb, 1.0 - lb}; }
  void validate() const;
};

enum class VoteDecision { kPositive, kNegative, kUndetermined };
VoteDecision decide(double score, const Thresholds& th);

/// Outcome of voting over one cluster. The three id sets partition the
/// cluster's unsampled ids; each is sorted ascending.
struct VoteReport {
  std::vector<RecordId> positives;
  std::vector<RecordId> undetermined;
  std::vector<RecordId> negatives;
  std::map<RecordId, double> scores;
  /// Tuples whose largest weight exceeded v/k (SimVote only).
  std::size_t skew_violations = 0;

  bool operator==(const VoteReport&) const = default;
};

/// Similarity between an unsampled tuple and a sampled tuple; must be >= 0.
using SimilarityFn = std::function<double(RecordId target, RecordId sampled)>;

/// Cluster-level score |O+| / |O| applied to every unsampled tuple.
VoteReport uni_vote(std::span<const OracleOutcome> outcomes, std::span<const RecordId> cluster_ids,
                    std::span<const RecordId> sampled_ids, const Thresholds& th);

/// Per-tuple score: sampled labels weighted by normalized similarity.
/// `skew_bound` is the constant v in max_i w_i <= v/k; violations are
/// counted in the report, not rejected.
VoteReport sim_vote(std::span<const OracleOutcome> outcomes, std::span<const RecordId> cluster_ids,
                    std::span<const RecordId> sampled_ids, const Thresholds& th,
                    const SimilarityFn& sim, double skew_bound = 2.0);

/// 1 / (1 + d): strictly positive, equal to 1 at d = 0.
double similarity_from_distance(double distance);

/// Similarity of two embeddings under Euclidean distance divided by
/// `distance_scale` (the batch's maximum distance when normalizing).
double default_similarity(std::span<const float> a, std::span<const float> b,
                          double distance_scale = 1.0);

}  // namespace semfilter
