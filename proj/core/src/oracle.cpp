#include "semfilter/oracle.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "http_util.hpp"

namespace semfilter {

using json = nlohmann::json;

std::string_view to_string(OutcomeSource source) {
  switch (source) {
    case OutcomeSource::kLlm: return "llm";
    case OutcomeSource::kCache: return "cache";
    case OutcomeSource::kMock: return "mock";
    case OutcomeSource::kFallback: return "fallback";
  }
  return "unknown";
}

bool parse_label(std::string_view completion) {
  std::size_t i = 0;
  while (i < completion.size()) {
    while (i < completion.size() && std::isalpha(static_cast<unsigned char>(completion[i])) == 0) ++i;
    const std::size_t start = i;
    while (i < completion.size() && std::isalpha(static_cast<unsigned char>(completion[i])) != 0) ++i;
    if (i == start) break;
    std::string word(completion.substr(start, i - start));
    for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (word == "true") return true;
    if (word == "false") return false;
  }
  throw Error(ErrorKind::kUndecidable, "completion has no True/False token: \"" +
                                           std::string(completion.substr(0, 120)) + "\"");
}

OracleReply ColumnOracle::evaluate(const Predicate&, const Record& record) {
  const std::string* value = record.find(column_);
  if (value == nullptr) {
    throw Error(ErrorKind::kMissingColumn, "no ground-truth column '" + column_ + "'");
  }
  std::string lowered = *value;
  for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lowered == "1") return {true, 0, 0};
  if (lowered == "0") return {false, 0, 0};
  return {parse_label(lowered), 0, 0};
}

BernoulliOracle::BernoulliOracle(std::uint64_t seed, std::unordered_map<RecordId, double> purity,
                                 std::uint64_t draw)
    : seed_(seed), purity_(std::move(purity)), draw_(draw) {}

double BernoulliOracle::purity(RecordId id) const {
  auto it = purity_.find(id);
  if (it == purity_.end()) {
    throw Error(ErrorKind::kInvalidArgument, "no purity for record " + std::to_string(id));
  }
  return it->second;
}

bool BernoulliOracle::draw_label(RecordId id, std::uint64_t draw) const {
  return hashed_uniform01(derive_seed(seed_, id, draw)) < purity(id);
}

OracleReply BernoulliOracle::evaluate(const Predicate&, const Record& record) {
  return {draw_label(record.id, draw_), 0, 0};
}

HttpChatOracle::HttpChatOracle(OracleConfig config)
    : config_(std::move(config)), api_key_(detail::env_or_empty(config_.api_key_env)) {}

std::string HttpChatOracle::request_body(const std::string& prompt) const {
  json body = {
      {"model", config_.model},
      {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
      {"temperature", config_.temperature},
      {"max_tokens", config_.max_output_tokens},
  };
  return body.dump();
}

HttpChatOracle::Completion HttpChatOracle::complete(const std::string& prompt) const {
  const auto endpoint = detail::split_base_url(config_.base_url);
  const std::string path = endpoint.path_prefix + "/v1/chat/completions";
  const std::string body = request_body(prompt);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_error = "no attempts made";
  const int attempts = std::max(1, config_.retry.max_attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      detail::backoff_sleep(config_.retry.initial_backoff, config_.retry.max_backoff, attempt - 1);
    }
    httplib::Client client(endpoint.origin);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "chat request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "chat endpoint returned HTTP " + std::to_string(res->status);
      if (detail::retryable_status(res->status)) continue;
      throw Error(ErrorKind::kTransport, last_error);
    }
    try {
      const json parsed = json::parse(res->body);
      Completion out;
      const auto& content = parsed.at("choices").at(0).at("message").at("content");
      out.text = content.is_string() ? content.get<std::string>() : std::string{};
      if (auto usage = parsed.find("usage"); usage != parsed.end() && usage->is_object()) {
        out.prompt_tokens = usage->value("prompt_tokens", std::uint64_t{0});
        out.completion_tokens = usage->value("completion_tokens", std::uint64_t{0});
      }
      return out;
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, std::string("malformed chat response: ") + e.what());
    }
  }
  throw Error(ErrorKind::kTransport, last_error);
}

OracleReply HttpChatOracle::evaluate(const Predicate& predicate, const Record& record) {
  const std::string prompt = render_prompt(predicate, record);
  Completion first = complete(prompt);
  OracleReply reply{false, first.prompt_tokens, first.completion_tokens};
  try {
    reply.label = parse_label(first.text);
    return reply;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndecidable) throw;
  }
  // One clarification retry, then give up.
  Completion second = complete(prompt + "\n" + std::string(kClarificationLine));
  reply.prompt_tokens += second.prompt_tokens;
  reply.completion_tokens += second.completion_tokens;
  reply.label = parse_label(second.text);
  return reply;
}

OracleCache::OracleCache(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json row = json::parse(line);
      OracleOutcome outcome;
      outcome.id = row.at("rid").get<RecordId>();
      outcome.label = row.at("label").get<bool>();
      outcome.prompt_tokens = row.at("pt").get<std::uint64_t>();
      outcome.completion_tokens = row.at("ct").get<std::uint64_t>();
      outcome.source = OutcomeSource::kCache;
      const auto pkey = std::stoull(row.at("pkey").get<std::string>(), nullptr, 16);
      entries_[Key{pkey, outcome.id}] = outcome;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kParse,
                  path_ + " line " + std::to_string(line_no) + ": bad cache entry: " + e.what());
    }
  }
}

std::optional<OracleOutcome> OracleCache::lookup(std::uint64_t predicate_key, RecordId id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(Key{predicate_key, id});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void OracleCache::store(std::uint64_t predicate_key, const OracleOutcome& outcome) {
  std::lock_guard lock(mu_);
  OracleOutcome cached = outcome;
  cached.source = OutcomeSource::kCache;
  entries_[Key{predicate_key, outcome.id}] = cached;
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error(ErrorKind::kIo, "cannot append to cache " + path_);
  out << json{{"pkey", to_hex64(predicate_key)},
              {"rid", outcome.id},
              {"label", outcome.label},
              {"pt", outcome.prompt_tokens},
              {"ct", outcome.completion_tokens}}
             .dump()
      << '\n';
}

std::size_t OracleCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

LabelOracle::LabelOracle(std::shared_ptr<OracleBackend> backend, OracleConfig config)
    : backend_(std::move(backend)), config_(std::move(config)) {
  if (!backend_) throw Error(ErrorKind::kInvalidArgument, "oracle backend is null");
  if (config_.cache_path) cache_ = std::make_unique<OracleCache>(*config_.cache_path);
}

std::vector<OracleOutcome> LabelOracle::invoke_batch(const Predicate& predicate,
                                                     const std::vector<Record>& records) {
  std::vector<const Record*> pointers;
  pointers.reserve(records.size());
  for (const auto& r : records) pointers.push_back(&r);
  return invoke_batch(predicate, pointers);
}

std::vector<OracleOutcome> LabelOracle::invoke_batch(const Predicate& predicate,
                                                     std::span<const Record* const> records) {
  if (records.empty()) return {};
  const std::uint64_t pkey = predicate.hash();
  std::vector<OracleOutcome> outcomes(records.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (cache_) {
      if (auto hit = cache_->lookup(pkey, records[i]->id)) {
        outcomes[i] = *hit;
        ++cache_hits_;
        continue;
      }
    }
    pending.push_back(i);
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t p = next++; p < pending.size(); p = next++) {
      {
        std::lock_guard lock(failure_mu);
        if (failure) return;
      }
      const std::size_t i = pending[p];
      const Record& record = *records[i];
      try {
        const OracleReply reply = backend_->evaluate(predicate, record);
        OracleOutcome outcome{record.id, reply.label, reply.prompt_tokens,
                              reply.completion_tokens, backend_->source()};
        ++llm_calls_;
        prompt_tokens_ += reply.prompt_tokens;
        completion_tokens_ += reply.completion_tokens;
        if (cache_) cache_->store(pkey, outcome);
        outcomes[i] = outcome;
      } catch (const Error& e) {
        std::lock_guard lock(failure_mu);
        if (!failure) {
          failure = std::make_exception_ptr(OracleFailure(e.kind(), record.id, e.what()));
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads =
      pending.empty() ? 0 : std::clamp<std::size_t>(config_.parallelism, 1, pending.size());
  if (threads > 0) {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  std::sort(outcomes.begin(), outcomes.end(),
            [](const OracleOutcome& a, const OracleOutcome& b) { return a.id < b.id; });
  return outcomes;
}

OracleStats LabelOracle::stats() const {
  return {llm_calls_.load(), cache_hits_.load(), prompt_tokens_.load(), completion_tokens_.load()};
}

}  // namespace semfilter
