#include <doctest.h>

#include <json.hpp>
#include <mutex>

#include "semfilter/embedding_store.hpp"
#include "support.hpp"

using namespace semfilter;
using json = nlohmann::json;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

class FunctionProvider : public EmbeddingProvider {
 public:
  explicit FunctionProvider(std::function<std::vector<float>(const std::string&, int)> fn)
      : fn_(std::move(fn)) {}
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override {
    std::vector<std::vector<float>> out;
    std::lock_guard lock(mu_);
    for (const auto& t : texts) {
      seen.push_back(t);
      out.push_back(fn_(t, calls_));
    }
    ++calls_;
    return out;
  }
  std::vector<std::string> seen;

 private:
  std::function<std::vector<float>(const std::string&, int)> fn_;
  std::mutex mu_;
  int calls_ = 0;
};

EmbeddingSet small_set() {
  EmbeddingSet set(4);
  set.insert(10, std::vector<float>{1.0f, -2.5f, 0.1f, 3.0e-38f});
  set.insert(3, std::vector<float>{0.0f, -0.0f, 1e30f, 7.0f});
  set.insert(99, std::vector<float>{0.3333333f, 2.0f, -1.0f, 1.0f / 3.0f});
  return set;
}

}  // namespace

TEST_SUITE("embedding_store") {

TEST_CASE("binary round trip is bit exact and keeps order") {
  const EmbeddingSet set = small_set();
  const std::string bytes = serialize_embeddings(set);
  CHECK(bytes.size() == 20 + 3 * (8 + 4 * 4));
  CHECK(bytes.substr(0, 4) == "CSVE");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 4);
  CHECK(bytes[12] == 3);
  const EmbeddingSet back = deserialize_embeddings(bytes);
  CHECK(back == set);
  CHECK(back.ids() == std::vector<RecordId>{10, 3, 99});
  // -0.0 keeps its sign bit.
  CHECK(std::signbit(back.at(3)[1]));
}

TEST_CASE("file and jsonl round trips") {
  testing::TempDir dir;
  const EmbeddingSet set = small_set();
  write_embeddings(set, dir.file("e.bin"));
  CHECK(read_embeddings(dir.file("e.bin")) == set);
  write_embeddings(set, dir.file("e.jsonl"));
  CHECK(read_embeddings(dir.file("e.jsonl")) == set);
  write_embeddings(EmbeddingSet{}, dir.file("empty.bin"));
  CHECK(read_embeddings(dir.file("empty.bin")).empty());
}

TEST_CASE("corrupt files are rejected") {
  std::string bytes = serialize_embeddings(small_set());
  std::string bad_magic = bytes;
  bad_magic.replace(0, 4, "XXXX");
  CHECK(kind_of([&] { deserialize_embeddings(bad_magic); }) == ErrorKind::kBadMagic);

  std::string bad_version = bytes;
  bad_version[4] = 2;
  CHECK(kind_of([&] { deserialize_embeddings(bad_version); }) == ErrorKind::kVersionMismatch);

  std::string more = bytes;
  more[12] = 4;  // count says 4, payload holds 3
  CHECK(kind_of([&] { deserialize_embeddings(more); }) == ErrorKind::kTruncated);
  CHECK(kind_of([&] { deserialize_embeddings(bytes.substr(0, bytes.size() - 1)); }) ==
        ErrorKind::kTruncated);
  CHECK(kind_of([&] { deserialize_embeddings(bytes.substr(0, 10)); }) == ErrorKind::kTruncated);
  CHECK(kind_of([&] { deserialize_embeddings(bytes + "z"); }) == ErrorKind::kParse);
}

TEST_CASE("set invariants") {
  EmbeddingSet set(2);
  set.insert(1, std::vector<float>{1, 2});
  CHECK(kind_of([&] { set.insert(2, std::vector<float>{1, 2, 3}); }) == ErrorKind::kDimensionMismatch);
  CHECK(kind_of([&] { set.insert(1, std::vector<float>{1, 2}); }) == ErrorKind::kDuplicateId);
  CHECK(kind_of([&] { set.insert(3, std::vector<float>{NAN, 2}); }) == ErrorKind::kInvalidArgument);
  CHECK(set.size() == 1);
  CHECK_THROWS_AS(set.at(5), Error);
}

TEST_CASE("chunking") {
  CHECK(chunk_text("a b c", 5) == std::vector<std::string>{"a b c"});
  CHECK(chunk_text("  keep\n as is ", 10) == std::vector<std::string>{"  keep\n as is "});
  CHECK(chunk_text("a b c d e", 2) == std::vector<std::string>{"a b", "c d", "e"});
  CHECK(chunk_text("", 3) == std::vector<std::string>{""});
  CHECK_THROWS_AS(chunk_text("a", 0), Error);
}

TEST_CASE("short text embeds to the single provider vector") {
  Table t;
  t.add(testing::make_record(5, {{"review", "short text"}}));
  FunctionProvider provider([](const std::string&, int) { return std::vector<float>{0.25f, -4.0f}; });
  const EmbeddingSet set = embed_table(t, {"review"}, provider);
  CHECK(set.at(5)[0] == 0.25f);
  CHECK(set.at(5)[1] == -4.0f);
  CHECK(provider.seen == std::vector<std::string>{"review: short text"});
}

TEST_CASE("two chunks average to the midpoint") {
  Table t;
  t.add(testing::make_record(1, {{"t", "a b c d"}}));  // "t: a b c d" is five tokens
  FunctionProvider provider([](const std::string& text, int) {
    return text == "t: a b" ? std::vector<float>{1, 0} : std::vector<float>{0, 1};
  });
  EmbedOptions options;
  options.max_chunk_tokens = 3;
  const EmbeddingSet set = embed_table(t, {"t"}, provider, options);
  CHECK(provider.seen.size() == 2);
  CHECK(set.at(1)[0] == 0.5f);
  CHECK(set.at(1)[1] == 0.5f);
}

TEST_CASE("chunk mean equals the component-wise average") {
  Table t;
  std::string text;
  for (int i = 0; i < 37; ++i) text += "w" + std::to_string(i) + " ";
  t.add(testing::make_record(1, {{"t", text}}));
  std::vector<std::vector<float>> produced;
  FunctionProvider provider([&](const std::string& chunk, int) {
    const float h = static_cast<float>(fnv1a64(chunk) % 1000) / 7.0f;
    produced.push_back({h, -h, 1.0f});
    return produced.back();
  });
  EmbedOptions options;
  options.max_chunk_tokens = 5;
  options.batch_size = 3;
  options.parallelism = 1;
  const EmbeddingSet set = embed_table(t, {"t"}, provider, options);
  REQUIRE(produced.size() == 8);
  for (std::size_t d = 0; d < 3; ++d) {
    double mean = 0.0;
    for (const auto& v : produced) mean += v[d];
    mean /= static_cast<double>(produced.size());
    CHECK(std::abs(set.at(1)[d] - mean) <= 1e-6 * std::max(1.0, std::abs(mean)));
  }
}

TEST_CASE("dimension change across responses is an error") {
  Table t;
  t.add(testing::make_record(1, {{"t", "first"}}));
  t.add(testing::make_record(2, {{"t", "second"}}));
  FunctionProvider provider([](const std::string&, int call) {
    return std::vector<float>(call == 0 ? 1024 : 768, 0.5f);
  });
  EmbedOptions options;
  options.batch_size = 1;
  options.parallelism = 1;
  CHECK(kind_of([&] { embed_table(t, {"t"}, provider, options); }) == ErrorKind::kDimensionMismatch);
}

TEST_CASE("parallel batches land on the right records") {
  Table t;
  for (RecordId i = 0; i < 50; ++i) t.add(testing::make_record(i * 2, {{"t", std::to_string(i)}}));
  FunctionProvider provider([](const std::string& text, int) {
    return std::vector<float>{std::stof(text.substr(3)), 1.0f};
  });
  EmbedOptions options;
  options.batch_size = 4;
  options.parallelism = 4;
  const EmbeddingSet set = embed_table(t, {"t"}, provider, options);
  CHECK(set.ids() == t.ids());
  for (RecordId i = 0; i < 50; ++i) CHECK(set.at(i * 2)[0] == static_cast<float>(i));
}

TEST_CASE("http provider speaks the embeddings wire format") {
  testing::MockServer mock;
  std::atomic<int> requests{0};
  std::string seen_auth;
  json seen_body;
  std::mutex mu;
  mock.server().Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = requests++;
    if (n == 0) {
      res.status = 503;
      return;
    }
    {
      std::lock_guard lock(mu);
      seen_body = json::parse(req.body);
      seen_auth = req.get_header_value("Authorization");
    }
    json data = json::array();
    for (std::size_t i = 0; i < seen_body["input"].size(); ++i) {
      data.push_back({{"embedding", {static_cast<double>(i), 1.5}}, {"index", i}});
    }
    res.set_content(json{{"data", data}}.dump(), "application/json");
  });
  mock.start();
  ::setenv("SEMFILTER_TEST_EMBED_KEY", "sk-test", 1);
  HttpEmbeddingConfig cfg;
  cfg.base_url = mock.base_url();
  cfg.model = "mini-embed";
  cfg.api_key_env = "SEMFILTER_TEST_EMBED_KEY";
  cfg.retry.initial_backoff = std::chrono::milliseconds(1);
  HttpEmbeddingProvider provider(cfg);
  const auto vectors = provider.embed({"alpha", "beta"});
  CHECK(requests.load() == 2);
  REQUIRE(vectors.size() == 2);
  CHECK(vectors[1] == std::vector<float>{1.0f, 1.5f});
  CHECK(seen_body["model"] == "mini-embed");
  CHECK(seen_body["input"] == json::array({"alpha", "beta"}));
  CHECK(seen_auth == "Bearer sk-test");
}

TEST_CASE("http provider surfaces errors after bounded retries") {
  testing::MockServer mock;
  std::atomic<int> requests{0};
  mock.server().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    ++requests;
    res.status = 500;
  });
  mock.server().Post("/bad/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
  });
  mock.start();
  HttpEmbeddingConfig cfg;
  cfg.base_url = mock.base_url();
  cfg.retry.max_attempts = 3;
  cfg.retry.initial_backoff = std::chrono::milliseconds(1);
  HttpEmbeddingProvider provider(cfg);
  CHECK(kind_of([&] { provider.embed({"x"}); }) == ErrorKind::kTransport);
  CHECK(requests.load() == 3);

  cfg.base_url = mock.base_url() + "/bad/";
  HttpEmbeddingProvider unauthorized(cfg);
  CHECK(kind_of([&] { unauthorized.embed({"x"}); }) == ErrorKind::kTransport);

  cfg.base_url = "http://127.0.0.1:1";
  cfg.retry.max_attempts = 1;
  HttpEmbeddingProvider unreachable(cfg);
  CHECK(kind_of([&] { unreachable.embed({"x"}); }) == ErrorKind::kTransport);
}

}
