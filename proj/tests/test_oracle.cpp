#include <doctest.h>

#include <json.hpp>
#include <mutex>
#include <set>

#include "semfilter/oracle.hpp"
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

std::vector<Record> truth_records(std::size_t n) {
  std::vector<Record> records;
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back(testing::make_record(
        100 - i, {{"text", "row " + std::to_string(i)}, {"truth", i % 2 == 0 ? "true" : "false"}}));
  }
  return records;
}

/// Backend that counts calls and answers from a column after a delay that
/// depends on the id, so completions arrive out of order.
class SlowBackend : public OracleBackend {
 public:
  OracleReply evaluate(const Predicate&, const Record& record) override {
    std::this_thread::sleep_for(std::chrono::microseconds((record.id * 7919) % 3000));
    ++calls;
    return {*record.find("truth") == "true", 10, 1};
  }
  OutcomeSource source() const override { return OutcomeSource::kMock; }
  std::atomic<int> calls{0};
};

json chat_reply(const std::string& content, int pt = 20, int ct = 2) {
  return {{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}},
          {"usage", {{"prompt_tokens", pt}, {"completion_tokens", ct}}}};
}

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("label parser") {
  CHECK(parse_label("True") == true);
  CHECK(parse_label("false.") == false);
  CHECK(parse_label("The answer is True.") == true);
  CHECK(parse_label("  FALSE") == false);
  CHECK(parse_label("**True**, because...") == true);
  CHECK(parse_label("False. It is not true.") == false);
  CHECK(kind_of([] { parse_label("I cannot determine this."); }) == ErrorKind::kUndecidable);
  CHECK(kind_of([] { parse_label("untrue and falsehood"); }) == ErrorKind::kUndecidable);
  CHECK(kind_of([] { parse_label(""); }) == ErrorKind::kUndecidable);
}

TEST_CASE("column mock passes the ground truth through") {
  LabelOracle oracle(std::make_shared<ColumnOracle>("truth"));
  const auto records = truth_records(5);
  const auto outcomes = oracle.invoke_batch(Predicate("The {text} holds."), records);
  REQUIRE(outcomes.size() == 5);
  for (const auto& o : outcomes) {
    const auto& r = *std::find_if(records.begin(), records.end(), [&](auto& x) { return x.id == o.id; });
    CHECK(o.label == (*r.find("truth") == "true"));
    CHECK(o.source == OutcomeSource::kMock);
  }
  CHECK(oracle.stats().llm_calls == 5);
}

TEST_CASE("cache makes a repeated batch free") {
  testing::TempDir dir;
  OracleConfig cfg;
  cfg.cache_path = dir.file("cache.jsonl");
  const Predicate p("The {text} holds.");
  const auto records = truth_records(5);
  {
    LabelOracle oracle(std::make_shared<ColumnOracle>("truth"), cfg);
    oracle.invoke_batch(p, records);
    const auto again = oracle.invoke_batch(p, records);
    CHECK(oracle.stats().llm_calls == 5);
    CHECK(oracle.stats().cache_hits == 5);
    for (const auto& o : again) CHECK(o.source == OutcomeSource::kCache);
  }
  // A fresh process reloads the file.
  LabelOracle reloaded(std::make_shared<ColumnOracle>("truth"), cfg);
  const auto outcomes = reloaded.invoke_batch(p, records);
  CHECK(reloaded.stats().llm_calls == 0);
  CHECK(reloaded.stats().cache_hits == 5);
  // A different predicate misses.
  reloaded.invoke_batch(Predicate("The {text} fails."), records);
  CHECK(reloaded.stats().llm_calls == 5);
}

TEST_CASE("corrupt cache files are reported") {
  testing::TempDir dir;
  write_file(dir.file("c.jsonl"), "{\"pkey\": \"zz\"}\n");
  OracleConfig cfg;
  cfg.cache_path = dir.file("c.jsonl");
  CHECK(kind_of([&] { LabelOracle(std::make_shared<ColumnOracle>("truth"), cfg); }) ==
        ErrorKind::kParse);
}

TEST_CASE("outcomes come back in id order whatever the completion order") {
  auto backend = std::make_shared<SlowBackend>();
  OracleConfig cfg;
  cfg.parallelism = 8;
  LabelOracle oracle(backend, cfg);
  const auto records = truth_records(40);
  const auto outcomes = oracle.invoke_batch(Predicate("x"), records);
  REQUIRE(outcomes.size() == 40);
  for (std::size_t i = 1; i < outcomes.size(); ++i) CHECK(outcomes[i - 1].id < outcomes[i].id);
  CHECK(backend->calls.load() == 40);
  CHECK(oracle.stats().prompt_tokens == 400);
  CHECK(oracle.stats().completion_tokens == 40);

  OracleConfig serial_cfg;
  serial_cfg.parallelism = 1;
  LabelOracle serial(std::make_shared<SlowBackend>(), serial_cfg);
  CHECK(serial.invoke_batch(Predicate("x"), records) == outcomes);
}

TEST_CASE("bernoulli mock is a pure function of seed, id and draw") {
  std::unordered_map<RecordId, double> purity;
  for (RecordId i = 0; i < 20000; ++i) purity[i] = 0.9;
  BernoulliOracle a(7, purity), b(7, purity), other(8, purity);
  int positives = 0, differ = 0, redraw_differ = 0;
  for (RecordId i = 0; i < 20000; ++i) {
    CHECK(a.draw_label(i, 0) == b.draw_label(i, 0));
    positives += a.draw_label(i, 0);
    differ += a.draw_label(i, 0) != other.draw_label(i, 0);
    redraw_differ += a.draw_label(i, 0) != a.draw_label(i, 1);
  }
  // Mean 0.9, binomial sd ~0.0021 at n = 20000.
  CHECK(std::abs(positives / 20000.0 - 0.9) < 0.01);
  // Independent draws disagree with probability 2 * 0.9 * 0.1 = 0.18.
  CHECK(std::abs(differ / 20000.0 - 0.18) < 0.02);
  CHECK(std::abs(redraw_differ / 20000.0 - 0.18) < 0.02);
  CHECK(kind_of([&] { a.draw_label(99999, 0); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("backend failures name the record") {
  LabelOracle oracle(std::make_shared<ColumnOracle>("missing"));
  const auto records = truth_records(3);
  try {
    oracle.invoke_batch(Predicate("x"), records);
    FAIL("expected failure");
  } catch (const OracleFailure& e) {
    CHECK(e.kind() == ErrorKind::kMissingColumn);
    CHECK(std::string(e.what()).find("record ") == 0);
  }
}

TEST_CASE("http chat oracle wire format, usage and clarification retry") {
  testing::MockServer mock;
  std::mutex mu;
  std::vector<json> bodies;
  mock.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body);
    std::lock_guard lock(mu);
    bodies.push_back(body);
    const std::string prompt = body["messages"][0]["content"];
    std::string answer;
    if (prompt.find("Statement: The fuzzy") != std::string::npos) {
      answer = prompt.find(kClarificationLine) != std::string::npos ? "False" : "Hmm, unclear.";
    } else if (prompt.find("Statement: The hopeless") != std::string::npos) {
      answer = "No idea.";
    } else {
      answer = "The answer is True.";
    }
    res.set_content(chat_reply(answer).dump(), "application/json");
  });
  mock.start();

  OracleConfig cfg;
  cfg.base_url = mock.base_url();
  cfg.model = "tiny-chat";
  cfg.parallelism = 2;
  auto backend = std::make_shared<HttpChatOracle>(cfg);
  const json sent = json::parse(backend->request_body("hello"));
  CHECK(sent["model"] == "tiny-chat");
  CHECK(sent["temperature"] == 0.7);
  CHECK(sent["max_tokens"] == 32);
  CHECK(sent["messages"] == json::array({{{"role", "user"}, {"content", "hello"}}}));

  LabelOracle oracle(backend, cfg);
  const Predicate p("The {text} is fine.");
  std::vector<Record> records = {testing::make_record(1, {{"text", "clear"}}),
                                 testing::make_record(2, {{"text", "fuzzy"}})};
  const auto outcomes = oracle.invoke_batch(p, records);
  CHECK(outcomes[0].label == true);
  CHECK(outcomes[0].source == OutcomeSource::kLlm);
  CHECK(outcomes[1].label == false);
  CHECK(outcomes[1].prompt_tokens == 40);  // both attempts are billed
  CHECK(oracle.stats().llm_calls == 2);
  CHECK(bodies.size() == 3);

  std::vector<Record> hopeless = {testing::make_record(3, {{"text", "hopeless"}})};
  try {
    oracle.invoke_batch(p, hopeless);
    FAIL("expected failure");
  } catch (const OracleFailure& e) {
    CHECK(e.kind() == ErrorKind::kUndecidable);
    CHECK(e.record_id() == 3);
  }
}

TEST_CASE("http chat oracle retries transient statuses then gives up") {
  testing::MockServer mock;
  std::atomic<int> hits{0};
  mock.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (hits++ < 2) {
      res.status = 429;
      return;
    }
    res.set_content(chat_reply("false").dump(), "application/json");
  });
  mock.server().Post("/down/v1/chat/completions",
                     [&](const httplib::Request&, httplib::Response& res) { res.status = 502; });
  mock.start();
  OracleConfig cfg;
  cfg.base_url = mock.base_url();
  cfg.retry.initial_backoff = std::chrono::milliseconds(1);
  HttpChatOracle ok(cfg);
  const auto record = testing::make_record(1, {{"text", "x"}});
  CHECK(ok.evaluate(Predicate("{text}"), record).label == false);
  CHECK(hits.load() == 3);

  cfg.base_url = mock.base_url() + "/down";
  cfg.retry.max_attempts = 2;
  HttpChatOracle down(cfg);
  CHECK(kind_of([&] { down.evaluate(Predicate("{text}"), record); }) == ErrorKind::kTransport);
}

}
