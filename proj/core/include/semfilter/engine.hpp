#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semfilter/clustering.hpp"
#include "semfilter/embedding_store.hpp"
#include "semfilter/oracle.hpp"
#include "semfilter/table.hpp"
#include "semfilter/voting.hpp"

namespace semfilter {

enum class VoteStrategy { kUni, kSim };
std::string_view to_string(VoteStrategy strategy);
VoteStrategy parse_vote_strategy(std::string_view name);

enum class Provenance { kOracle, kVote, kFallback };
std::string_view to_string(Provenance provenance);

struct FilterConfig {
  std::size_t k = 4;
  double xi = 0.005;
  Thresholds thresholds{0.15, 0.85};
  DistanceSpec distance;
  std::size_t min_sample = 101;
  int max_depth = 3;
  std::uint64_t seed = 0;
  VoteStrategy strategy = VoteStrategy::kUni;
  int max_iters = 100;
  double skew = 2.0;  // v used to flag SimVote weight skew

  void validate() const;
};

/// One cluster as processed in a round of the filter.
struct ClusterNode {
  std::vector<RecordId> ids;
  int depth = 0;
  std::vector<RecordId> sampled_ids;
  std::vector<OracleOutcome> outcomes;
  std::optional<VoteReport> report;  // empty when the whole cluster was sampled
};

struct FilterStats {
  std::uint64_t llm_calls = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  int recluster_rounds = 0;
  std::size_t fallback_calls = 0;
  std::size_t skew_violations = 0;
  double wall_time_seconds = 0.0;
};

struct FilterResult {
  std::map<RecordId, bool> labels;
  std::map<RecordId, Provenance> provenance;
  FilterStats stats;
  std::vector<ClusterNode> nodes;

  std::vector<RecordId> positives() const;
};

/// Thrown when the oracle fails mid-run; carries everything labeled so far.
class FilterFailure : public Error {
 public:
  FilterFailure(const Error& cause, FilterResult partial)
      : Error(cause.kind(), cause.what()), partial_(std::move(partial)) {}
  const FilterResult& partial() const { return partial_; }

 private:
  FilterResult partial_;
};

/// min(n, max(ceil(xi * n), min_sample)).
std::size_t sample_size(std::size_t cluster_size, double xi, std::size_t min_sample);

/// Simple random sample without replacement, sorted by id.
std::vector<RecordId> sample_cluster(std::span<const RecordId> ids, double xi,
                                     std::size_t min_sample, std::uint64_t seed);

/// Clustering-sampling-voting filter. Embeddings must cover every table id.
/// `lexical` is needed only when cfg.distance.lambda < 1; when null it is
/// built from the predicate's columns.
FilterResult semantic_filter(const Table& table, const EmbeddingSet& embeddings,
                             const Predicate& predicate, const FilterConfig& cfg,
                             LabelOracle& oracle, const LexicalIndex* lexical = nullptr);

/// Linear scan: one oracle call per record.
FilterResult reference_filter(const Table& table, const Predicate& predicate, LabelOracle& oracle);

/// {"id", "label", "provenance"} per line, ascending id.
std::string result_to_jsonl(const FilterResult& result);
/// Stats block as a JSON object string; wall time is included only when
/// `with_timing` is set.
std::string stats_to_json(const FilterStats& stats, bool with_timing = true);

}  // namespace semfilter
