#include "semfilter/embedding_store.hpp"

#include <httplib.h>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "http_util.hpp"

namespace semfilter {

using json = nlohmann::json;

EmbeddingSet::EmbeddingSet(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw Error(ErrorKind::kInvalidArgument, "embedding dimension must be positive");
}

void EmbeddingSet::insert(RecordId id, std::span<const float> values) {
  if (values.empty()) throw Error(ErrorKind::kInvalidArgument, "empty embedding vector");
  const std::size_t dim = dim_ == 0 ? values.size() : dim_;
  if (values.size() != dim) {
    throw Error(ErrorKind::kDimensionMismatch, "record " + std::to_string(id) + ": vector length " +
                                                   std::to_string(values.size()) +
                                                   " != set dimension " + std::to_string(dim));
  }
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kInvalidArgument,
                  "record " + std::to_string(id) + ": non-finite embedding entry");
    }
  }
  if (!index_.emplace(id, ids_.size()).second) {
    throw Error(ErrorKind::kDuplicateId, "duplicate embedding id " + std::to_string(id));
  }
  dim_ = dim;
  ids_.push_back(id);
  data_.insert(data_.end(), values.begin(), values.end());
}

std::span<const float> EmbeddingSet::at(RecordId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw Error(ErrorKind::kInvalidArgument, "no embedding for record " + std::to_string(id));
  }
  return {data_.data() + it->second * dim_, dim_};
}

bool EmbeddingSet::operator==(const EmbeddingSet& other) const {
  if (dim_ != other.dim_ || ids_ != other.ids_ || data_.size() != other.data_.size()) return false;
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

namespace {

constexpr char kMagic[4] = {'C', 'S', 'V', 'E'};
constexpr std::size_t kHeaderSize = 4 + 4 + 4 + 8;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(p[i]) << (8 * i);
  return value;
}

}  // namespace

std::string serialize_embeddings(const EmbeddingSet& set) {
  std::string out;
  out.reserve(kHeaderSize + set.size() * (8 + 4 * set.dim()));
  out.append(kMagic, 4);
  put_le<std::uint32_t>(out, kEmbeddingFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim()));
  put_le<std::uint64_t>(out, set.size());
  for (RecordId id : set.ids()) {
    put_le<std::uint64_t>(out, id);
    for (float v : set.at(id)) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

EmbeddingSet deserialize_embeddings(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::kBadMagic, "embedding file does not start with magic \"CSVE\"");
  }
  if (bytes.size() < kHeaderSize) throw Error(ErrorKind::kTruncated, "embedding header truncated");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto version = get_le<std::uint32_t>(p + 4);
  if (version != kEmbeddingFormatVersion) {
    throw Error(ErrorKind::kVersionMismatch,
                "embedding format version " + std::to_string(version) + " is not supported");
  }
  const auto dim = get_le<std::uint32_t>(p + 8);
  const auto count = get_le<std::uint64_t>(p + 12);
  if (dim == 0) {
    if (count != 0) throw Error(ErrorKind::kParse, "embedding dimension is zero");
    if (bytes.size() != kHeaderSize) throw Error(ErrorKind::kParse, "trailing bytes after embedding payload");
    return EmbeddingSet{};
  }
  const std::uint64_t record_size = 8 + 4ULL * dim;
  const std::uint64_t payload = bytes.size() - kHeaderSize;
  if (count > payload / record_size) {
    throw Error(ErrorKind::kTruncated, "header declares " + std::to_string(count) +
                                           " vectors but payload holds " +
                                           std::to_string(payload / record_size));
  }
  if (payload != count * record_size) {
    throw Error(ErrorKind::kParse, "trailing bytes after embedding payload");
  }
  EmbeddingSet set(dim);
  std::vector<float> values(dim);
  const unsigned char* cursor = p + kHeaderSize;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id = get_le<std::uint64_t>(cursor);
    cursor += 8;
    for (std::uint32_t d = 0; d < dim; ++d, cursor += 4) {
      values[d] = std::bit_cast<float>(get_le<std::uint32_t>(cursor));
    }
    set.insert(id, values);
  }
  return set;
}

void write_embeddings(const EmbeddingSet& set, const std::string& path) {
  if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") {
    write_file(path, embeddings_to_jsonl(set));
  } else {
    write_file(path, serialize_embeddings(set));
  }
}

EmbeddingSet read_embeddings(const std::string& path) {
  const std::string bytes = read_file(path);
  if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") {
    return embeddings_from_jsonl(bytes);
  }
  return deserialize_embeddings(bytes);
}

std::string embeddings_to_jsonl(const EmbeddingSet& set) {
  std::string out;
  for (RecordId id : set.ids()) {
    auto vec = set.at(id);
    json row = {{"id", id}, {"vec", std::vector<float>(vec.begin(), vec.end())}};
    out += row.dump();
    out.push_back('\n');
  }
  return out;
}

EmbeddingSet embeddings_from_jsonl(std::string_view content) {
  EmbeddingSet set;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    const std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const json row = json::parse(line);
      const auto vec = row.at("vec").get<std::vector<float>>();
      set.insert(row.at("id").get<RecordId>(), vec);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return set;
}

std::vector<std::string> chunk_text(std::string_view text, std::size_t max_tokens) {
  if (max_tokens == 0) throw Error(ErrorKind::kInvalidArgument, "max_chunk_tokens must be > 0");
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) tokens.push_back(text.substr(start, i - start));
  }
  if (tokens.size() <= max_tokens) return {std::string(text)};
  std::vector<std::string> chunks;
  for (std::size_t t = 0; t < tokens.size(); t += max_tokens) {
    std::string chunk;
    for (std::size_t j = t; j < std::min(tokens.size(), t + max_tokens); ++j) {
      if (!chunk.empty()) chunk.push_back(' ');
      chunk += tokens[j];
    }
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpEmbeddingConfig config)
    : config_(std::move(config)), api_key_(detail::env_or_empty(config_.api_key_env)) {}

std::vector<std::vector<float>> HttpEmbeddingProvider::embed(const std::vector<std::string>& texts) {
  const auto endpoint = detail::split_base_url(config_.base_url);
  const std::string path = endpoint.path_prefix + "/v1/embeddings";
  const std::string body = json{{"model", config_.model}, {"input", texts}}.dump();
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_error;
  for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
    if (attempt > 0) {
      detail::backoff_sleep(config_.retry.initial_backoff, config_.retry.max_backoff, attempt - 1);
    }
    httplib::Client client(endpoint.origin);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "embedding request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "embedding endpoint returned HTTP " + std::to_string(res->status);
      if (detail::retryable_status(res->status)) continue;
      throw Error(ErrorKind::kTransport, last_error);
    }
    std::vector<std::vector<float>> out;
    try {
      const json parsed = json::parse(res->body);
      for (const auto& item : parsed.at("data")) {
        out.push_back(item.at("embedding").get<std::vector<float>>());
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, std::string("malformed embedding response: ") + e.what());
    }
    if (out.size() != texts.size()) {
      throw Error(ErrorKind::kParse, "embedding response has " + std::to_string(out.size()) +
                                         " vectors for " + std::to_string(texts.size()) +
                                         " inputs");
    }
    return out;
  }
  throw Error(ErrorKind::kTransport, last_error);
}

EmbeddingSet embed_table(const Table& table, const std::vector<std::string>& columns,
                         EmbeddingProvider& provider, const EmbedOptions& options) {
  if (options.max_chunk_tokens == 0) {
    throw Error(ErrorKind::kInvalidArgument, "max_chunk_tokens must be > 0");
  }
  // Flatten every chunk of every record, remembering which record owns it.
  std::vector<std::string> chunks;
  std::vector<std::size_t> owner;
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (auto& chunk : chunk_text(fused_column_text(table.records()[r], columns),
                                  options.max_chunk_tokens)) {
      chunks.push_back(std::move(chunk));
      owner.push_back(r);
    }
  }
  if (chunks.empty()) return EmbeddingSet{};

  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  const std::size_t num_batches = (chunks.size() + batch - 1) / batch;
  std::vector<std::vector<float>> vectors(chunks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    for (std::size_t b = next++; b < num_batches; b = next++) {
      {
        std::lock_guard lock(failure_mu);
        if (failure) return;
      }
      const std::size_t begin = b * batch;
      const std::size_t end = std::min(chunks.size(), begin + batch);
      try {
        std::vector<std::string> texts(chunks.begin() + static_cast<std::ptrdiff_t>(begin),
                                       chunks.begin() + static_cast<std::ptrdiff_t>(end));
        auto result = provider.embed(texts);
        if (result.size() != texts.size()) {
          throw Error(ErrorKind::kParse, "provider returned wrong number of vectors");
        }
        for (std::size_t i = 0; i < result.size(); ++i) vectors[begin + i] = std::move(result[i]);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.parallelism, 1, num_batches);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim) {
      throw Error(ErrorKind::kDimensionMismatch, "provider returned vectors of dimension " +
                                                     std::to_string(dim) + " and " +
                                                     std::to_string(v.size()));
    }
  }

  EmbeddingSet set(dim);
  std::vector<double> sum(dim);
  std::vector<float> mean(dim);
  std::size_t c = 0;
  for (std::size_t r = 0; r < table.size(); ++r) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::size_t n = 0;
    for (; c < chunks.size() && owner[c] == r; ++c, ++n) {
      for (std::size_t d = 0; d < dim; ++d) sum[d] += vectors[c][d];
    }
    for (std::size_t d = 0; d < dim; ++d) mean[d] = static_cast<float>(sum[d] / static_cast<double>(n));
    set.insert(table.records()[r].id, mean);
  }
  return set;
}

}  // namespace semfilter
