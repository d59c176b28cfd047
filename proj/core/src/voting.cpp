#include "semfilter/voting.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "semfilter/clustering.hpp"

namespace semfilter {

void Thresholds::validate() const {
  if (!(lb >= 0.0 && lb < ub && ub <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "thresholds must satisfy 0 <= lb < ub <= 1");
  }
}

VoteDecision decide(double score, const Thresholds& th) {
  if (score >= th.ub) return VoteDecision::kPositive;
  if (score <= th.lb) return VoteDecision::kNegative;
  return VoteDecision::kUndetermined;
}

namespace {

struct Inputs {
  std::vector<RecordId> remaining;  // sorted
  std::vector<RecordId> sampled;    // sorted, aligned with labels
  std::vector<bool> labels;
  std::size_t positives = 0;
};

Inputs check_inputs(std::span<const OracleOutcome> outcomes, std::span<const RecordId> cluster_ids,
                    std::span<const RecordId> sampled_ids, const Thresholds& th) {
  th.validate();
  if (outcomes.empty()) throw Error(ErrorKind::kInvalidArgument, "voting needs at least one outcome");
  if (outcomes.size() != sampled_ids.size()) {
    throw Error(ErrorKind::kInvalidArgument, "outcomes must cover exactly the sampled ids");
  }
  const std::unordered_set<RecordId> cluster(cluster_ids.begin(), cluster_ids.end());
  std::unordered_set<RecordId> sampled;
  for (RecordId id : sampled_ids) {
    if (cluster.count(id) == 0) {
      throw Error(ErrorKind::kInvalidArgument, "sampled id " + std::to_string(id) + " not in cluster");
    }
    sampled.insert(id);
  }
  Inputs in;
  std::vector<OracleOutcome> sorted(outcomes.begin(), outcomes.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& o : sorted) {
    if (sampled.count(o.id) == 0) {
      throw Error(ErrorKind::kInvalidArgument,
                  "outcome for " + std::to_string(o.id) + " is not a sampled id");
    }
    if (!in.sampled.empty() && in.sampled.back() == o.id) {
      throw Error(ErrorKind::kInvalidArgument, "duplicate outcome for " + std::to_string(o.id));
    }
    in.sampled.push_back(o.id);
    in.labels.push_back(o.label);
    if (o.label) ++in.positives;
  }
  for (RecordId id : cluster_ids) {
    if (sampled.count(id) == 0) in.remaining.push_back(id);
  }
  std::sort(in.remaining.begin(), in.remaining.end());
  return in;
}

void place(VoteReport& report, RecordId id, double score, const Thresholds& th) {
  report.scores[id] = score;
  switch (decide(score, th)) {
    case VoteDecision::kPositive: report.positives.push_back(id); break;
    case VoteDecision::kNegative: report.negatives.push_back(id); break;
    case VoteDecision::kUndetermined: report.undetermined.push_back(id); break;
  }
}

}  // namespace

VoteReport uni_vote(std::span<const OracleOutcome> outcomes, std::span<const RecordId> cluster_ids,
                    std::span<const RecordId> sampled_ids, const Thresholds& th) {
  const Inputs in = check_inputs(outcomes, cluster_ids, sampled_ids, th);
  const double score = static_cast<double>(in.positives) / static_cast<double>(in.labels.size());
  VoteReport report;
  for (RecordId id : in.remaining) place(report, id, score, th);
  return report;
}

VoteReport sim_vote(std::span<const OracleOutcome> outcomes, std::span<const RecordId> cluster_ids,
                    std::span<const RecordId> sampled_ids, const Thresholds& th,
                    const SimilarityFn& sim, double skew_bound) {
  const Inputs in = check_inputs(outcomes, cluster_ids, sampled_ids, th);
  const std::size_t k = in.sampled.size();
  const double uniform_score = static_cast<double>(in.positives) / static_cast<double>(k);
  const double weight_cap = skew_bound / static_cast<double>(k);

  VoteReport report;
  std::vector<double> weights(k);
  for (RecordId target : in.remaining) {
    for (std::size_t j = 0; j < k; ++j) {
      const double s = sim(target, in.sampled[j]);
      if (!(s >= 0.0) || !std::isfinite(s)) {
        throw Error(ErrorKind::kInvalidArgument, "similarity must be finite and non-negative");
      }
      weights[j] = s;
    }
    const auto [lo, hi] = std::minmax_element(weights.begin(), weights.end());
    if (*hi <= 0.0) {
      throw Error(ErrorKind::kInvalidArgument,
                  "zero similarity normalizer for record " + std::to_string(target));
    }
    double score;
    if (*lo == *hi) {
      // Equal weights are exactly 1/k; use the unweighted mean directly.
      score = uniform_score;
    } else {
      // Neumaier-compensated sums; a single division keeps the result a
      // convex combination within [0, 1].
      double total = 0.0, total_c = 0.0, pos = 0.0, pos_c = 0.0;
      auto add = [](double& sum, double& comp, double x) {
        const double t = sum + x;
        comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
      };
      for (std::size_t j = 0; j < k; ++j) {
        add(total, total_c, weights[j]);
        if (in.labels[j]) add(pos, pos_c, weights[j]);
      }
      score = std::clamp((pos + pos_c) / (total + total_c), 0.0, 1.0);
    }
    double total = 0.0;
    for (double w : weights) total += w;
    if (*hi / total > weight_cap * (1.0 + 1e-12)) ++report.skew_violations;
    place(report, target, score, th);
  }
  return report;
}

double similarity_from_distance(double distance) {
  if (!(distance >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "distance must be non-negative");
  return 1.0 / (1.0 + distance);
}

double default_similarity(std::span<const float> a, std::span<const float> b,
                          double distance_scale) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "similarity between vectors of unequal dimension");
  }
  const double d = euclidean(a, b);
  return similarity_from_distance(distance_scale > 0.0 ? d / distance_scale : d);
}

}  // namespace semfilter
