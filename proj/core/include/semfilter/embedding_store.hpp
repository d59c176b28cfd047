#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "semfilter/table.hpp"
#include "semfilter/util.hpp"

namespace semfilter {

/// Fixed-dimension float vectors keyed by record id. Storage is contiguous in
/// insertion order so serialization is stable.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  /// Throws kDimensionMismatch on wrong length, kInvalidArgument on
  /// non-finite entries, kDuplicateId on a repeated id.
  void insert(RecordId id, std::span<const float> values);

  bool contains(RecordId id) const { return index_.count(id) != 0; }
  std::span<const float> at(RecordId id) const;
  const std::vector<RecordId>& ids() const { return ids_; }

  /// Same dim, same ids in the same order, bit-identical floats.
  bool operator==(const EmbeddingSet& other) const;

 private:
  std::size_t dim_ = 0;
  std::vector<RecordId> ids_;
  std::vector<float> data_;
  std::unordered_map<RecordId, std::size_t> index_;
};

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

std::string serialize_embeddings(const EmbeddingSet& set);
EmbeddingSet deserialize_embeddings(std::string_view bytes);
void write_embeddings(const EmbeddingSet& set, const std::string& path);
/// Reads the binary format, or JSONL ({"id": n, "vec": [...]}) when the
/// path ends in ".jsonl".
EmbeddingSet read_embeddings(const std::string& path);

std::string embeddings_to_jsonl(const EmbeddingSet& set);
EmbeddingSet embeddings_from_jsonl(std::string_view content);

/// Splits on whitespace into contiguous chunks of at most max_tokens tokens.
/// Text within the limit is returned unchanged as a single chunk.
std::vector<std::string> chunk_text(std::string_view text, std::size_t max_tokens);

/// Source of embedding vectors for a batch of texts, in input order.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) = 0;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{250};
  std::chrono::milliseconds max_backoff{4000};
};

struct HttpEmbeddingConfig {
  std::string base_url = "http://localhost:8000";
  std::string model = "text-embedding-3-small";
  std::string api_key_env = "OPENAI_API_KEY";
  RetryPolicy retry;
  std::chrono::seconds timeout{60};
};

/// Client for POST {base}/v1/embeddings.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(HttpEmbeddingConfig config);
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override;

 private:
  HttpEmbeddingConfig config_;
  std::string api_key_;
};

struct EmbedOptions {
  std::size_t max_chunk_tokens = 450;
  std::size_t batch_size = 64;
  std::size_t parallelism = 4;
};

/// Embeds each record's fused column text. Long texts are chunked and the
/// record vector is the plain mean of its chunk vectors.
EmbeddingSet embed_table(const Table& table, const std::vector<std::string>& columns,
                         EmbeddingProvider& provider, const EmbedOptions& options = {});

}  // namespace semfilter
