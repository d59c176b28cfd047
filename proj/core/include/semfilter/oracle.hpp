#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semfilter/embedding_store.hpp"
#include "semfilter/table.hpp"
#include "semfilter/util.hpp"

namespace semfilter {

enum class OutcomeSource { kLlm, kCache, kMock, kFallback };
std::string_view to_string(OutcomeSource source);

struct OracleOutcome {
  RecordId id = 0;
  bool label = false;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  OutcomeSource source = OutcomeSource::kLlm;

  bool operator==(const OracleOutcome&) const = default;
};

/// Case-insensitive scan for a standalone "true" or "false"; the first one
/// found wins. Throws kUndecidable when neither appears.
bool parse_label(std::string_view completion);

struct OracleConfig {
  std::string base_url = "http://localhost:8000";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.7;
  std::uint32_t max_output_tokens = 32;
  std::size_t parallelism = 8;
  RetryPolicy retry;
  std::chrono::seconds timeout{60};
  std::optional<std::string> cache_path;
};

/// One oracle answer before caching and bookkeeping.
struct OracleReply {
  bool label = false;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
};

/// Answers M(t, e) for one record. Implementations must be safe to call
/// concurrently.
class OracleBackend {
 public:
  virtual ~OracleBackend() = default;
  virtual OracleReply evaluate(const Predicate& predicate, const Record& record) = 0;
  virtual OutcomeSource source() const = 0;
};

/// Mock oracle reading the label from a ground-truth column.
class ColumnOracle : public OracleBackend {
 public:
  explicit ColumnOracle(std::string column) : column_(std::move(column)) {}
  OracleReply evaluate(const Predicate& predicate, const Record& record) override;
  OutcomeSource source() const override { return OutcomeSource::kMock; }

 private:
  std::string column_;
};

/// Mock oracle answering Bernoulli(p) per record, where p is the record's
/// hidden purity. Draws are a pure function of (seed, record id, draw), so
/// `draw` selects independent re-draws of the same stochastic oracle.
class BernoulliOracle : public OracleBackend {
 public:
  BernoulliOracle(std::uint64_t seed, std::unordered_map<RecordId, double> purity,
                  std::uint64_t draw = 0);
  OracleReply evaluate(const Predicate& predicate, const Record& record) override;
  OutcomeSource source() const override { return OutcomeSource::kMock; }

  bool draw_label(RecordId id, std::uint64_t draw) const;
  double purity(RecordId id) const;

 private:
  std::uint64_t seed_;
  std::unordered_map<RecordId, double> purity_;
  std::uint64_t draw_;
};

/// Client for POST {base}/v1/chat/completions.
class HttpChatOracle : public OracleBackend {
 public:
  explicit HttpChatOracle(OracleConfig config);
  OracleReply evaluate(const Predicate& predicate, const Record& record) override;
  OutcomeSource source() const override { return OutcomeSource::kLlm; }

  /// Request body for one prompt; exposed for wire-format tests.
  std::string request_body(const std::string& prompt) const;

 private:
  struct Completion {
    std::string text;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
  };
  Completion complete(const std::string& prompt) const;

  OracleConfig config_;
  std::string api_key_;
};

inline constexpr std::string_view kClarificationLine =
    "Your previous reply could not be read. Reply with only True or False.";

/// Persistent (predicate hash, record id) -> outcome store, JSONL backed.
class OracleCache {
 public:
  OracleCache() = default;
  /// Loads existing entries from `path` (if present) and appends new ones.
  explicit OracleCache(std::string path);

  std::optional<OracleOutcome> lookup(std::uint64_t predicate_key, RecordId id) const;
  void store(std::uint64_t predicate_key, const OracleOutcome& outcome);
  std::size_t size() const;

 private:
  struct Key {
    std::uint64_t predicate;
    RecordId id;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return static_cast<std::size_t>(splitmix64(k.predicate ^ splitmix64(k.id)));
    }
  };
  mutable std::mutex mu_;
  std::string path_;
  std::unordered_map<Key, OracleOutcome, KeyHash> entries_;
};

struct OracleStats {
  std::uint64_t llm_calls = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
};

/// The predicate oracle M(t, e): cache lookup, bounded-parallel dispatch to
/// a backend, and call accounting. Every dispatched prompt counts as one
/// LLM call; cache hits count nothing.
class LabelOracle {
 public:
  LabelOracle(std::shared_ptr<OracleBackend> backend, OracleConfig config = {});

  /// One outcome per record, sorted by record id.
  std::vector<OracleOutcome> invoke_batch(const Predicate& predicate,
                                          std::span<const Record* const> records);
  std::vector<OracleOutcome> invoke_batch(const Predicate& predicate,
                                          const std::vector<Record>& records);

  OracleStats stats() const;
  const OracleConfig& config() const { return config_; }

 private:
  std::shared_ptr<OracleBackend> backend_;
  OracleConfig config_;
  std::unique_ptr<OracleCache> cache_;
  std::atomic<std::uint64_t> llm_calls_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
  std::atomic<std::uint64_t> prompt_tokens_{0};
  std::atomic<std::uint64_t> completion_tokens_{0};
};

/// Raised by invoke_batch when a record cannot be answered; names the record.
class OracleFailure : public Error {
 public:
  OracleFailure(ErrorKind kind, RecordId id, const std::string& message)
      : Error(kind, "record " + std::to_string(id) + ": " + message), id_(id) {}
  RecordId record_id() const noexcept { return id_; }

 private:
  RecordId id_;
};

}  // namespace semfilter
