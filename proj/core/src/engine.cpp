#include "semfilter/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iterator>
#include <json.hpp>

namespace semfilter {

using json = nlohmann::json;

std::string_view to_string(VoteStrategy strategy) {
  return strategy == VoteStrategy::kSim ? "sim" : "uni";
}

VoteStrategy parse_vote_strategy(std::string_view name) {
  if (name == "uni") return VoteStrategy::kUni;
  if (name == "sim") return VoteStrategy::kSim;
  throw Error(ErrorKind::kInvalidArgument, "unknown vote strategy '" + std::string(name) + "'");
}

std::string_view to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::kOracle: return "oracle";
    case Provenance::kVote: return "vote";
    case Provenance::kFallback: return "fallback";
  }
  return "unknown";
}

void FilterConfig::validate() const {
  if (k < 1) throw Error(ErrorKind::kInvalidArgument, "k must be at least 1");
  if (!(xi > 0.0 && xi <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "xi must lie in (0, 1]");
  if (min_sample < 1) throw Error(ErrorKind::kInvalidArgument, "min_sample must be at least 1");
  if (max_depth < 0) throw Error(ErrorKind::kInvalidArgument, "max_depth must be >= 0");
  if (!(skew >= 1.0)) throw Error(ErrorKind::kInvalidArgument, "skew must be >= 1");
  thresholds.validate();
  distance.validate();
}

std::vector<RecordId> FilterResult::positives() const {
  std::vector<RecordId> out;
  for (const auto& [id, label] : labels) {
    if (label) out.push_back(id);
  }
  return out;
}

std::size_t sample_size(std::size_t cluster_size, double xi, std::size_t min_sample) {
  // The small offset keeps products like 0.01 * 100 from rounding up to 2.
  const double raw = std::ceil(xi * static_cast<double>(cluster_size) - 1e-9);
  const auto proportional = static_cast<std::size_t>(std::max(0.0, raw));
  return std::min(cluster_size, std::max(proportional, min_sample));
}

std::vector<RecordId> sample_cluster(std::span<const RecordId> ids, double xi,
                                     std::size_t min_sample, std::uint64_t seed) {
  Rng rng(seed);
  auto sample = sample_without_replacement(ids, sample_size(ids.size(), xi, min_sample), rng);
  std::sort(sample.begin(), sample.end());
  return sample;
}

namespace {

constexpr std::uint64_t kKMeansStream = 0x6b6d65616e73ULL;  // "kmeans"
constexpr std::uint64_t kSampleStream = 0x73616d706c65ULL;  // "sample"

class Run {
 public:
  Run(const Table& table, const EmbeddingSet& embeddings, const Predicate& predicate,
      const FilterConfig& cfg, LabelOracle& oracle, const LexicalIndex* lexical)
      : table_(table),
        embeddings_(embeddings),
        predicate_(predicate),
        cfg_(cfg),
        oracle_(oracle),
        lexical_(lexical),
        start_stats_(oracle.stats()) {}

  FilterResult& result() { return result_; }

  void finish_stats() {
    const OracleStats now = oracle_.stats();
    result_.stats.llm_calls = now.llm_calls - start_stats_.llm_calls;
    result_.stats.cache_hits = now.cache_hits - start_stats_.cache_hits;
    result_.stats.prompt_tokens = now.prompt_tokens - start_stats_.prompt_tokens;
    result_.stats.completion_tokens = now.completion_tokens - start_stats_.completion_tokens;
  }

  void execute() {
    std::vector<RecordId> pool = table_.ids();
    if (pool.empty()) return;
    for (int depth = 0;; ++depth) {
      KMeansOptions options{cfg_.k, cfg_.distance, derive_seed(cfg_.seed, kKMeansStream, depth),
                            cfg_.max_iters};
      const Partition partition = kmeans(pool, embeddings_, options, lexical_);
      std::vector<RecordId> undetermined;
      for (std::size_t j = 0; j < partition.clusters.size(); ++j) {
        process_cluster(partition.clusters[j].members, depth, j, undetermined);
      }
      if (undetermined.empty()) return;
      std::sort(undetermined.begin(), undetermined.end());
      if (depth >= cfg_.max_depth || undetermined.size() <= cfg_.min_sample) {
        fallback(undetermined);
        return;
      }
      ++result_.stats.recluster_rounds;
      pool = std::move(undetermined);
    }
  }

 private:
  std::vector<const Record*> records_for(std::span<const RecordId> ids) const {
    std::vector<const Record*> out;
    out.reserve(ids.size());
    for (RecordId id : ids) out.push_back(&table_.at(id));
    return out;
  }

  void label(RecordId id, bool value, Provenance provenance) {
    result_.labels[id] = value;
    result_.provenance[id] = provenance;
  }

  void process_cluster(const std::vector<RecordId>& ids, int depth, std::size_t index,
                       std::vector<RecordId>& undetermined) {
    ClusterNode node;
    node.ids = ids;
    node.depth = depth;
    node.sampled_ids = sample_cluster(ids, cfg_.xi, cfg_.min_sample,
                                      derive_seed(cfg_.seed ^ kSampleStream, index, depth));
    node.outcomes = oracle_.invoke_batch(predicate_, records_for(node.sampled_ids));
    for (const auto& outcome : node.outcomes) label(outcome.id, outcome.label, Provenance::kOracle);

    if (node.sampled_ids.size() < ids.size()) {
      VoteReport report = vote(node);
      for (RecordId id : report.positives) label(id, true, Provenance::kVote);
      for (RecordId id : report.negatives) label(id, false, Provenance::kVote);
      undetermined.insert(undetermined.end(), report.undetermined.begin(),
                          report.undetermined.end());
      result_.stats.skew_violations += report.skew_violations;
      node.report = std::move(report);
    }
    result_.nodes.push_back(std::move(node));
  }

  VoteReport vote(const ClusterNode& node) const {
    if (cfg_.strategy == VoteStrategy::kUni) {
      return uni_vote(node.outcomes, node.ids, node.sampled_ids, cfg_.thresholds);
    }
    std::vector<RecordId> members = node.ids;
    std::sort(members.begin(), members.end());
    std::vector<RecordId> remaining;
    std::set_difference(members.begin(), members.end(), node.sampled_ids.begin(),
                        node.sampled_ids.end(), std::back_inserter(remaining));
    // Distances are normalized over the (unsampled x sampled) pairs of this cluster.
    const HybridDistance metric(embeddings_, lexical_, cfg_.distance, remaining, node.sampled_ids);
    SimilarityFn sim = [&metric](RecordId a, RecordId b) {
      return similarity_from_distance(metric(a, b));
    };
    return sim_vote(node.outcomes, node.ids, node.sampled_ids, cfg_.thresholds, sim, cfg_.skew);
  }

  void fallback(const std::vector<RecordId>& ids) {
    const auto outcomes = oracle_.invoke_batch(predicate_, records_for(ids));
    for (const auto& outcome : outcomes) label(outcome.id, outcome.label, Provenance::kFallback);
    result_.stats.fallback_calls += outcomes.size();
  }

  const Table& table_;
  const EmbeddingSet& embeddings_;
  const Predicate& predicate_;
  const FilterConfig& cfg_;
  LabelOracle& oracle_;
  const LexicalIndex* lexical_;
  OracleStats start_stats_;
  FilterResult result_;
};

}  // namespace

FilterResult semantic_filter(const Table& table, const EmbeddingSet& embeddings,
                             const Predicate& predicate, const FilterConfig& cfg,
                             LabelOracle& oracle, const LexicalIndex* lexical) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  predicate.validate(table.column_schema());
  for (const auto& record : table.records()) {
    if (!embeddings.contains(record.id)) {
      throw Error(ErrorKind::kInvalidArgument,
                  "embeddings do not cover record " + std::to_string(record.id));
    }
  }
  std::optional<LexicalIndex> owned_lexical;
  if (cfg.distance.lambda < 1.0 && lexical == nullptr && !table.empty()) {
    owned_lexical = LexicalIndex::from_table(table, predicate.referenced_columns(), cfg.distance.bm25);
    lexical = &*owned_lexical;
  }

  Run run(table, embeddings, predicate, cfg, oracle, lexical);
  try {
    run.execute();
  } catch (const Error& e) {
    run.finish_stats();
    throw FilterFailure(e, std::move(run.result()));
  }
  run.finish_stats();
  run.result().stats.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return std::move(run.result());
}

FilterResult reference_filter(const Table& table, const Predicate& predicate, LabelOracle& oracle) {
  const auto start = std::chrono::steady_clock::now();
  predicate.validate(table.column_schema());
  const OracleStats before = oracle.stats();
  FilterResult result;
  std::vector<const Record*> records;
  records.reserve(table.size());
  for (const auto& r : table.records()) records.push_back(&r);
  auto finish = [&] {
    const OracleStats after = oracle.stats();
    result.stats.llm_calls = after.llm_calls - before.llm_calls;
    result.stats.cache_hits = after.cache_hits - before.cache_hits;
    result.stats.prompt_tokens = after.prompt_tokens - before.prompt_tokens;
    result.stats.completion_tokens = after.completion_tokens - before.completion_tokens;
  };
  try {
    for (const auto& outcome : oracle.invoke_batch(predicate, records)) {
      result.labels[outcome.id] = outcome.label;
      result.provenance[outcome.id] = Provenance::kOracle;
    }
  } catch (const Error& e) {
    finish();
    throw FilterFailure(e, std::move(result));
  }
  finish();
  result.stats.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string result_to_jsonl(const FilterResult& result) {
  std::string out;
  for (const auto& [id, label] : result.labels) {
    out += json{{"id", id}, {"label", label}, {"provenance", to_string(result.provenance.at(id))}}
               .dump();
    out.push_back('\n');
  }
  return out;
}

std::string stats_to_json(const FilterStats& stats, bool with_timing) {
  json j = {
      {"llm_calls", stats.llm_calls},
      {"cache_hits", stats.cache_hits},
      {"prompt_tokens", stats.prompt_tokens},
      {"completion_tokens", stats.completion_tokens},
      {"recluster_rounds", stats.recluster_rounds},
      {"fallback_calls", stats.fallback_calls},
      {"skew_violations", stats.skew_violations},
  };
  if (with_timing) j["wall_time_seconds"] = stats.wall_time_seconds;
  return j.dump();
}

}  // namespace semfilter
