#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <optional>

#include "semfilter/clustering.hpp"
#include "semfilter/embedding_store.hpp"
#include "semfilter/engine.hpp"
#include "semfilter/evalsim.hpp"
#include "semfilter/lexical.hpp"
#include "semfilter/oracle.hpp"
#include "semfilter/planner.hpp"
#include "semfilter/table.hpp"

namespace semfilter::cli {
namespace {

using json = nlohmann::json;

constexpr const char* kVersion = "0.1.0";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runtime failure reported under its own kind, with optional extra fields.
class RunError : public std::runtime_error {
 public:
  RunError(std::string kind, const std::string& message, json detail = json::object())
      : std::runtime_error(message), kind_(std::move(kind)), detail_(std::move(detail)) {}
  const std::string& kind() const { return kind_; }
  const json& detail() const { return detail_; }

 private:
  std::string kind_;
  json detail_;
};

void emit_error(std::ostream& err, const std::string& kind, const std::string& message,
                const json& detail = json::object()) {
  json line = {{"error", kind}, {"message", message}};
  for (const auto& [key, value] : detail.items()) line[key] = value;
  err << line.dump() << '\n';
}

void log(std::ostream& err, const std::string& message) { err << "semfilter: " << message << '\n'; }

/// Argument checks done by the library are usage errors at this level.
template <typename F>
void as_usage(F&& check) {
  try {
    check();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kInvalidArgument) throw;
    throw UsageError(e.what());
  }
}

double parse_double(const std::string& text, const std::string& what) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::kParse, what + ": '" + text + "' is not a number");
  }
  return value;
}

void write_output(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
  } else {
    write_file(path, content);
  }
}

std::string file_sha1(const std::string& path) { return git_blob_sha1(read_file(path)); }

// ---------------------------------------------------------------------------
// Shared option groups

struct TableInput {
  std::string path;
  std::string format;
  std::string id_column = "id";

  TableFormat resolved_format() const {
    return format.empty() ? table_format_for_path(path) : parse_table_format(format);
  }
  Table load() const { return load_table(path, resolved_format(), id_column); }
};

json table_input_to_json(const TableInput& in) {
  return {{"path", in.path}, {"format", in.format}, {"id_column", in.id_column}};
}

TableInput table_input_from_json(const json& j) {
  TableInput in;
  in.path = j.at("path").get<std::string>();
  in.format = j.at("format").get<std::string>();
  in.id_column = j.at("id_column").get<std::string>();
  return in;
}

void add_table_options(CLI::App* cmd, TableInput& in, bool required) {
  auto* table = cmd->add_option("--table", in.path, "Input table (JSONL or CSV)");
  if (required) table->required();
  cmd->add_option("--format", in.format, "Table format, jsonl or csv (default: by extension)")
      ->check(CLI::IsMember({"jsonl", "csv"}));
  cmd->add_option("--id-column", in.id_column, "Field holding record ids; empty for row numbers")
      ->capture_default_str();
}

std::vector<std::string> resolve_columns(const Table& table, const std::vector<std::string>& wanted) {
  if (wanted.empty()) return table.column_schema();
  for (const auto& column : wanted) {
    if (!table.has_column(column)) throw UsageError("table has no column '" + column + "'");
  }
  return wanted;
}

// ---------------------------------------------------------------------------
// Filter run description (the replayable part of a manifest)

struct OracleSpec {
  std::string kind = "mock";
  std::string mock_kind = "column";
  std::string truth_column = "truth";
  std::string purity_column = "purity";
  std::uint64_t seed = 0;
  std::uint64_t draw = 0;
  std::string base_url = OracleConfig{}.base_url;
  std::string model = OracleConfig{}.model;
  std::string api_key_env = OracleConfig{}.api_key_env;
  double temperature = OracleConfig{}.temperature;
  std::uint32_t max_output_tokens = OracleConfig{}.max_output_tokens;
  std::size_t parallelism = OracleConfig{}.parallelism;
  std::string cache;
};

json oracle_to_json(const OracleSpec& o) {
  return {{"kind", o.kind},
          {"mock_kind", o.mock_kind},
          {"truth_column", o.truth_column},
          {"purity_column", o.purity_column},
          {"seed", o.seed},
          {"draw", o.draw},
          {"base_url", o.base_url},
          {"model", o.model},
          {"api_key_env", o.api_key_env},
          {"temperature", o.temperature},
          {"max_output_tokens", o.max_output_tokens},
          {"parallelism", o.parallelism},
          {"cache", o.cache}};
}

OracleSpec oracle_from_json(const json& j) {
  OracleSpec o;
  j.at("kind").get_to(o.kind);
  j.at("mock_kind").get_to(o.mock_kind);
  j.at("truth_column").get_to(o.truth_column);
  j.at("purity_column").get_to(o.purity_column);
  j.at("seed").get_to(o.seed);
  j.at("draw").get_to(o.draw);
  j.at("base_url").get_to(o.base_url);
  j.at("model").get_to(o.model);
  j.at("api_key_env").get_to(o.api_key_env);
  j.at("temperature").get_to(o.temperature);
  j.at("max_output_tokens").get_to(o.max_output_tokens);
  j.at("parallelism").get_to(o.parallelism);
  j.at("cache").get_to(o.cache);
  return o;
}

OracleConfig oracle_config(const OracleSpec& o) {
  OracleConfig cfg;
  cfg.base_url = o.base_url;
  cfg.model = o.model;
  cfg.api_key_env = o.api_key_env;
  cfg.temperature = o.temperature;
  cfg.max_output_tokens = o.max_output_tokens;
  cfg.parallelism = o.parallelism;
  if (!o.cache.empty()) cfg.cache_path = o.cache;
  return cfg;
}

std::shared_ptr<OracleBackend> make_backend(const OracleSpec& o, const Table& table) {
  if (o.kind == "http") return std::make_shared<HttpChatOracle>(oracle_config(o));
  if (o.mock_kind == "column") {
    if (!table.has_column(o.truth_column)) {
      throw UsageError("mock oracle: table has no column '" + o.truth_column + "'");
    }
    return std::make_shared<ColumnOracle>(o.truth_column);
  }
  std::unordered_map<RecordId, double> purity;
  for (const auto& record : table.records()) {
    const std::string* value = record.find(o.purity_column);
    if (value == nullptr) {
      throw Error(ErrorKind::kMissingColumn, "record " + std::to_string(record.id) +
                                                 " has no purity column '" + o.purity_column + "'");
    }
    purity[record.id] = parse_double(*value, "purity of record " + std::to_string(record.id));
  }
  return std::make_shared<BernoulliOracle>(o.seed, std::move(purity), o.draw);
}

json config_to_json(const FilterConfig& cfg, const std::string& strategy) {
  return {{"k", cfg.k},
          {"xi", cfg.xi},
          {"thresholds", {{"lb", cfg.thresholds.lb}, {"ub", cfg.thresholds.ub}}},
          {"distance",
           {{"lambda", cfg.distance.lambda},
            {"bm25", {{"k1", cfg.distance.bm25.k1}, {"b", cfg.distance.bm25.b}}}}},
          {"min_sample", cfg.min_sample},
          {"max_depth", cfg.max_depth},
          {"seed", cfg.seed},
          {"strategy", strategy},
          {"max_iters", cfg.max_iters},
          {"skew", cfg.skew}};
}

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw UsageError(where + " must be a JSON object");
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw UsageError(where + ": unknown field '" + item.key() + "'");
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& into) {
  if (auto it = obj.find(key); it != obj.end()) it->get_to(into);
}

/// Applies a FilterConfig-shaped JSON object; absent fields keep their value.
/// An optional "planner" block {epsilon, failure_base, sigma_hat_sq} replaces
/// "xi".
void apply_config_json(const json& j, FilterConfig& cfg, std::string& strategy,
                       std::optional<PlannerParams>& planner) {
  check_keys(j, {"k", "xi", "thresholds", "distance", "min_sample", "max_depth", "seed", "strategy",
                 "max_iters", "skew", "planner"},
             "config");
  read_field(j, "k", cfg.k);
  read_field(j, "xi", cfg.xi);
  if (auto it = j.find("thresholds"); it != j.end()) {
    check_keys(*it, {"lb", "ub"}, "config.thresholds");
    read_field(*it, "lb", cfg.thresholds.lb);
    if (it->contains("lb") && !it->contains("ub")) cfg.thresholds.ub = 1.0 - cfg.thresholds.lb;
    read_field(*it, "ub", cfg.thresholds.ub);
  }
  if (auto it = j.find("distance"); it != j.end()) {
    check_keys(*it, {"lambda", "bm25"}, "config.distance");
    read_field(*it, "lambda", cfg.distance.lambda);
    if (auto b = it->find("bm25"); b != it->end()) {
      check_keys(*b, {"k1", "b"}, "config.distance.bm25");
      read_field(*b, "k1", cfg.distance.bm25.k1);
      read_field(*b, "b", cfg.distance.bm25.b);
    }
  }
  read_field(j, "min_sample", cfg.min_sample);
  read_field(j, "max_depth", cfg.max_depth);
  read_field(j, "seed", cfg.seed);
  read_field(j, "strategy", strategy);
  read_field(j, "max_iters", cfg.max_iters);
  read_field(j, "skew", cfg.skew);
  if (auto it = j.find("planner"); it != j.end()) {
    if (j.contains("xi")) throw UsageError("config: 'xi' and 'planner' are mutually exclusive");
    check_keys(*it, {"epsilon", "failure_base", "sigma_hat_sq"}, "config.planner");
    PlannerParams p;
    read_field(*it, "epsilon", p.epsilon);
    read_field(*it, "failure_base", p.failure_base);
    read_field(*it, "sigma_hat_sq", p.sigma_hat_sq);
    planner = p;
  }
}

struct RunSpec {
  TableInput table;
  std::string embeddings;
  std::string predicate;
  std::string instruction;
  std::string strategy = "uni";
  FilterConfig cfg;
  std::optional<PlannerParams> planner;
  XiPlan plan;
  OracleSpec oracle;
};

json run_spec_to_json(const RunSpec& s) {
  json planner = nullptr;
  if (s.planner) {
    planner = {{"epsilon", s.planner->epsilon},
               {"failure_base", s.planner->failure_base},
               {"sigma_hat_sq", s.planner->sigma_hat_sq},
               {"skew", s.planner->skew},
               {"feasible", s.plan.feasible},
               {"planned_xi", s.plan.xi}};
  }
  return {{"table", table_input_to_json(s.table)},
          {"embeddings", s.embeddings},
          {"predicate", {{"template", s.predicate}, {"instruction", s.instruction}}},
          {"config", config_to_json(s.cfg, s.strategy)},
          {"planner", planner},
          {"oracle", oracle_to_json(s.oracle)}};
}

RunSpec run_spec_from_json(const json& j) {
  RunSpec s;
  s.table = table_input_from_json(j.at("table"));
  j.at("embeddings").get_to(s.embeddings);
  j.at("predicate").at("template").get_to(s.predicate);
  j.at("predicate").at("instruction").get_to(s.instruction);
  std::optional<PlannerParams> unused;
  apply_config_json(j.at("config"), s.cfg, s.strategy, unused);
  if (const json& p = j.at("planner"); !p.is_null()) {
    PlannerParams params;
    p.at("epsilon").get_to(params.epsilon);
    p.at("failure_base").get_to(params.failure_base);
    p.at("sigma_hat_sq").get_to(params.sigma_hat_sq);
    p.at("skew").get_to(params.skew);
    s.planner = params;
    p.at("feasible").get_to(s.plan.feasible);
    p.at("planned_xi").get_to(s.plan.xi);
  }
  s.oracle = oracle_from_json(j.at("oracle"));
  return s;
}

// ---------------------------------------------------------------------------
// filter

struct FilterArgs {
  TableInput table;
  std::string embeddings;
  std::string predicate;
  std::string instruction;
  std::string config;
  std::string out;
  std::string manifest;
  std::string replay;
  bool manifest_timing = false;

  std::optional<std::string> strategy;
  std::optional<std::size_t> k;
  std::optional<double> xi;
  std::optional<double> epsilon;
  std::optional<double> sigma2;
  std::optional<double> failure_base;
  std::optional<double> lb;
  std::optional<double> ub;
  std::optional<std::size_t> min_sample;
  std::optional<int> max_depth;
  std::optional<int> max_iters;
  std::optional<double> lambda;
  std::optional<double> skew;
  std::optional<std::uint64_t> seed;

  OracleSpec oracle;
  std::optional<std::uint64_t> oracle_seed;
};

void add_filter_options(CLI::App* cmd, FilterArgs& a) {
  add_table_options(cmd, a.table, false);
  cmd->add_option("--embeddings", a.embeddings, "Embedding file (binary, or .jsonl)");
  cmd->add_option("--predicate", a.predicate, "Predicate template, e.g. \"The {review} is positive.\"");
  cmd->add_option("--instruction", a.instruction, "Optional instruction placed before the statement");
  cmd->add_option("--config", a.config, "JSON file with FilterConfig fields; flags override it");
  cmd->add_option("--strategy", a.strategy, "uni, sim or reference")
      ->check(CLI::IsMember({"uni", "sim", "reference"}));
  cmd->add_option("--k", a.k, "Clusters per round");
  auto* xi = cmd->add_option("--xi", a.xi, "Sample ratio per cluster");
  auto* eps = cmd->add_option("--epsilon", a.epsilon, "Error tolerance; plans the sample ratio");
  xi->excludes(eps);
  cmd->add_option("--sigma2", a.sigma2, "Variance estimate for the planner (default 0.25)");
  cmd->add_option("--failure-base", a.failure_base, "Failure base l for the planner (default 0.9996)");
  cmd->add_option("--lb", a.lb, "Lower vote threshold");
  cmd->add_option("--ub", a.ub, "Upper vote threshold (default 1 - lb)");
  cmd->add_option("--min-sample", a.min_sample, "Minimum sample size per cluster");
  cmd->add_option("--max-depth", a.max_depth, "Re-clustering rounds before fallback");
  cmd->add_option("--max-iters", a.max_iters, "Lloyd iteration cap");
  cmd->add_option("--lambda", a.lambda, "Embedding weight of the hybrid distance");
  cmd->add_option("--skew", a.skew, "Weight skew constant v for SimVote");
  cmd->add_option("--seed", a.seed, "Master seed");
  cmd->add_option("--oracle", a.oracle.kind, "http or mock")
      ->check(CLI::IsMember({"http", "mock"}))
      ->capture_default_str();
  cmd->add_option("--mock-kind", a.oracle.mock_kind, "column or bernoulli")
      ->check(CLI::IsMember({"column", "bernoulli"}))
      ->capture_default_str();
  cmd->add_option("--truth-column", a.oracle.truth_column, "Label column for the column mock")
      ->capture_default_str();
  cmd->add_option("--purity-column", a.oracle.purity_column, "Probability column for the bernoulli mock")
      ->capture_default_str();
  cmd->add_option("--oracle-seed", a.oracle_seed, "Seed of the bernoulli mock (default: --seed)");
  cmd->add_option("--draw", a.oracle.draw, "Re-draw index of the bernoulli mock")->capture_default_str();
  cmd->add_option("--base-url", a.oracle.base_url, "Chat completions server")->capture_default_str();
  cmd->add_option("--model", a.oracle.model, "Chat model")->capture_default_str();
  cmd->add_option("--api-key-env", a.oracle.api_key_env, "Environment variable holding the API key")
      ->capture_default_str();
  cmd->add_option("--temperature", a.oracle.temperature, "Sampling temperature")->capture_default_str();
  cmd->add_option("--max-output-tokens", a.oracle.max_output_tokens, "Completion token cap")
      ->capture_default_str();
  cmd->add_option("--parallelism", a.oracle.parallelism, "Concurrent oracle requests")
      ->capture_default_str();
  cmd->add_option("--cache", a.oracle.cache, "Oracle cache file (JSONL)");
  cmd->add_option("--out", a.out, "Result JSONL (default: stdout)");
  cmd->add_option("--manifest", a.manifest, "Write a run manifest here");
  cmd->add_flag("--manifest-timing", a.manifest_timing, "Record wall time in the manifest");
  cmd->add_option("--replay", a.replay, "Re-run the manifest and check the result hash");
}

RunSpec resolve_filter(const FilterArgs& a) {
  RunSpec s;
  s.table = a.table;
  s.embeddings = a.embeddings;
  s.predicate = a.predicate;
  s.instruction = a.instruction;
  FilterConfig& cfg = s.cfg;
  std::optional<PlannerParams> planner;
  if (!a.config.empty()) {
    json j;
    try {
      j = json::parse(read_file(a.config));
      apply_config_json(j, cfg, s.strategy, planner);
    } catch (const json::exception& e) {
      throw UsageError("config " + a.config + ": " + e.what());
    }
  }
  if (a.strategy) s.strategy = *a.strategy;
  if (s.strategy != "uni" && s.strategy != "sim" && s.strategy != "reference") {
    throw UsageError("unknown strategy '" + s.strategy + "'");
  }
  if (a.k) cfg.k = *a.k;
  if (a.xi) {
    cfg.xi = *a.xi;
    planner.reset();
  }
  if (a.lb) {
    cfg.thresholds.lb = *a.lb;
    cfg.thresholds.ub = a.ub.value_or(1.0 - *a.lb);
  } else if (a.ub) {
    cfg.thresholds.ub = *a.ub;
  }
  if (a.min_sample) cfg.min_sample = *a.min_sample;
  if (a.max_depth) cfg.max_depth = *a.max_depth;
  if (a.max_iters) cfg.max_iters = *a.max_iters;
  if (a.lambda) cfg.distance.lambda = *a.lambda;
  if (a.skew) cfg.skew = *a.skew;
  if (a.seed) cfg.seed = *a.seed;

  if (a.epsilon) {
    planner = PlannerParams{};
    planner->epsilon = *a.epsilon;
  }
  if (planner) {
    if (a.sigma2) planner->sigma_hat_sq = *a.sigma2;
    if (a.failure_base) planner->failure_base = *a.failure_base;
    planner->skew = cfg.skew;
    as_usage([&] { planner->validate(); });
    s.plan = s.strategy == "sim" ? xi_simvote(*planner) : xi_univote(*planner);
    if (!s.plan.feasible) {
      cfg.xi = 1.0;
    } else if (s.plan.xi > 0.0) {
      cfg.xi = s.plan.xi;
    }
    s.planner = planner;
  } else if (a.sigma2 || a.failure_base) {
    throw UsageError("--sigma2 and --failure-base only apply with --epsilon");
  }
  as_usage([&] { cfg.validate(); });

  s.oracle = a.oracle;
  s.oracle.seed = a.oracle_seed.value_or(cfg.seed);
  if (s.oracle.parallelism < 1) throw UsageError("--parallelism must be at least 1");
  return s;
}

FilterResult execute_filter(const RunSpec& s, const Table& table, const EmbeddingSet& embeddings) {
  const Predicate predicate(s.predicate, s.instruction);
  predicate.validate(table.column_schema());
  LabelOracle oracle(make_backend(s.oracle, table), oracle_config(s.oracle));
  if (s.strategy == "reference") return reference_filter(table, predicate, oracle);
  FilterConfig cfg = s.cfg;
  cfg.strategy = parse_vote_strategy(s.strategy);
  return semantic_filter(table, embeddings, predicate, cfg, oracle);
}

json provenance_counts(const FilterResult& result) {
  std::map<std::string, std::size_t> counts{{"oracle", 0}, {"vote", 0}, {"fallback", 0}};
  for (const auto& [id, p] : result.provenance) ++counts[std::string(to_string(p))];
  return counts;
}

int cmd_filter(const FilterArgs& a, CLI::App* cmd, std::ostream& out, std::ostream& err) {
  RunSpec spec;
  std::optional<json> replayed;
  if (!a.replay.empty()) {
    for (const CLI::Option* option : cmd->get_options()) {
      const std::string name = option->get_name();
      if (option->count() == 0 || name == "--replay" || name == "--out" || name == "--manifest" ||
          name == "--manifest-timing" || name == "--help") {
        continue;
      }
      throw UsageError("--replay cannot be combined with " + name);
    }
    try {
      replayed = json::parse(read_file(a.replay));
      spec = run_spec_from_json(replayed->at("run"));
    } catch (const json::exception& e) {
      throw UsageError("manifest " + a.replay + ": " + e.what());
    }
  } else {
    std::string missing;
    if (a.table.path.empty()) missing = "--table";
    else if (a.predicate.empty()) missing = "--predicate";
    if (!missing.empty()) {
      err << cmd->help();
      throw UsageError(missing + " is required");
    }
    spec = resolve_filter(a);
    if (spec.strategy != "reference" && spec.embeddings.empty()) {
      err << cmd->help();
      throw UsageError("--embeddings is required for strategy " + spec.strategy);
    }
  }

  const std::string table_bytes = read_file(spec.table.path);
  const Table table = parse_table(table_bytes, spec.table.resolved_format(), spec.table.id_column);
  json inputs = {{"table", {{"path", spec.table.path}, {"sha1", git_blob_sha1(table_bytes)}}}};
  EmbeddingSet embeddings;
  if (!spec.embeddings.empty()) {
    embeddings = read_embeddings(spec.embeddings);
    inputs["embeddings"] = {{"path", spec.embeddings}, {"sha1", file_sha1(spec.embeddings)}};
  }
  if (replayed && replayed->at("inputs") != inputs) {
    throw RunError("replay_mismatch", "inputs differ from the manifest",
                   {{"expected", replayed->at("inputs")}, {"actual", inputs}});
  }

  FilterResult result;
  try {
    result = execute_filter(spec, table, embeddings);
  } catch (const FilterFailure& failure) {
    json detail = {{"labeled", failure.partial().labels.size()}};
    if (!a.out.empty() && a.out != "-") {
      const std::string partial_path = a.out + ".partial";
      write_file(partial_path, result_to_jsonl(failure.partial()));
      detail["partial"] = partial_path;
    }
    throw RunError(std::string(to_string(failure.kind())), failure.what(), detail);
  }

  const std::string jsonl = result_to_jsonl(result);
  const std::string result_sha = git_blob_sha1(jsonl);
  const std::string out_path = a.out.empty() ? "-" : a.out;
  write_output(out_path, jsonl, out);

  json manifest = {{"tool", "semfilter"},
                   {"version", kVersion},
                   {"command", "filter"},
                   {"run", run_spec_to_json(spec)},
                   {"seed", spec.cfg.seed},
                   {"inputs", inputs},
                   {"outputs", {{"result", {{"path", out_path}, {"sha1", result_sha}}}}},
                   {"stats", json::parse(stats_to_json(result.stats, false))}};
  if (a.manifest_timing) manifest["timing"] = {{"wall_time_seconds", result.stats.wall_time_seconds}};
  if (!a.manifest.empty()) write_file(a.manifest, manifest.dump(2) + "\n");

  json summary = {{"command", "filter"},
                  {"strategy", spec.strategy},
                  {"xi", spec.cfg.xi},
                  {"labels", result.labels.size()},
                  {"positives", result.positives().size()},
                  {"provenance", provenance_counts(result)},
                  {"result", out_path},
                  {"result_sha1", result_sha},
                  {"manifest", a.manifest.empty() ? json(nullptr) : json(a.manifest)},
                  {"stats", json::parse(stats_to_json(result.stats, true))}};
  if (spec.planner) summary["planner_feasible"] = spec.plan.feasible;
  if (replayed) {
    const std::string expected = replayed->at("outputs").at("result").at("sha1").get<std::string>();
    summary["replay"] = {{"expected_sha1", expected}, {"identical", expected == result_sha}};
    if (expected != result_sha) {
      throw RunError("replay_mismatch", "result differs from the manifest",
                     {{"expected_sha1", expected}, {"actual_sha1", result_sha}});
    }
  }
  if (spec.planner && !spec.plan.feasible) {
    log(err, "planner found no sample ratio below 1 for these settings; every tuple was sampled");
  }
  if (out_path == "-") {
    log(err, summary.dump());
  } else {
    out << summary.dump() << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// embed

struct EmbedArgs {
  TableInput table;
  std::vector<std::string> columns;
  std::string out;
  HttpEmbeddingConfig http;
  EmbedOptions options;
};

int cmd_embed(const EmbedArgs& a, std::ostream& out) {
  const Table table = a.table.load();
  const auto columns = resolve_columns(table, a.columns);
  if (a.options.batch_size < 1 || a.options.parallelism < 1 || a.options.max_chunk_tokens < 1) {
    throw UsageError("--batch-size, --parallelism and --max-chunk-tokens must be positive");
  }
  HttpEmbeddingProvider provider(a.http);
  const EmbeddingSet set = embed_table(table, columns, provider, a.options);
  write_embeddings(set, a.out);
  out << json{{"command", "embed"},
              {"count", set.size()},
              {"dim", set.dim()},
              {"columns", columns},
              {"out", a.out},
              {"sha1", file_sha1(a.out)}}
             .dump()
      << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// cluster

struct ClusterArgs {
  std::string embeddings;
  TableInput table;
  std::vector<std::string> columns;
  std::string out;
  KMeansOptions options;
};

int cmd_cluster(const ClusterArgs& a, std::ostream& out, std::ostream& err) {
  as_usage([&] { a.options.distance.validate(); });
  if (a.options.k < 1) throw UsageError("--k must be at least 1");
  const EmbeddingSet embeddings = read_embeddings(a.embeddings);
  std::optional<LexicalIndex> lexical;
  if (!a.options.distance.pure_euclidean()) {
    if (a.table.path.empty()) throw UsageError("--lambda below 1 needs --table for the lexical part");
    const Table table = a.table.load();
    lexical = LexicalIndex::from_table(table, resolve_columns(table, a.columns), a.options.distance.bm25);
  }
  const Partition partition =
      kmeans(embeddings.ids(), embeddings, a.options, lexical ? &*lexical : nullptr);
  write_output(a.out, partition_to_jsonl(partition), out);

  std::vector<std::size_t> sizes;
  for (const auto& c : partition.clusters) sizes.push_back(c.members.size());
  json summary = {{"command", "cluster"},
                  {"clusters", sizes},
                  {"iterations", partition.iterations},
                  {"objective", partition.objective_history.empty()
                                    ? json(nullptr)
                                    : json(partition.objective_history.back())},
                  {"out", a.out.empty() ? "-" : a.out}};
  if (a.out.empty() || a.out == "-") {
    log(err, summary.dump());
  } else {
    out << summary.dump() << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// plan

struct PlanArgs {
  std::string epsilon = "0.10..0.30";
  double step = 0.05;
  double sigma2 = 0.25;
  double failure_base = 0.9996;
  double skew = 2.0;
  double lb = 0.15;
  std::optional<double> ub;
  std::optional<std::uint64_t> population;
};

std::vector<double> epsilon_grid(const std::string& range, double step) {
  const auto dots = range.find("..");
  if (dots == std::string::npos) return {parse_double(range, "--epsilon")};
  const double lo = parse_double(range.substr(0, dots), "--epsilon");
  const double hi = parse_double(range.substr(dots + 2), "--epsilon");
  if (!(step > 0.0)) throw UsageError("--step must be positive");
  if (hi < lo) throw UsageError("--epsilon range is empty");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> grid;
  for (std::size_t i = 0; i < count; ++i) {
    // Rounding keeps 0.1 + 3 * 0.05 printing as 0.25.
    grid.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
  }
  return grid;
}

int cmd_plan(const PlanArgs& a, std::ostream& out) {
  std::vector<double> grid;
  try {
    grid = epsilon_grid(a.epsilon, a.step);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const Thresholds th{a.lb, a.ub.value_or(1.0 - a.lb)};
  as_usage([&] { th.validate(); });
  for (double eps : grid) {
    PlannerParams p;
    p.epsilon = eps;
    p.sigma_hat_sq = a.sigma2;
    p.failure_base = a.failure_base;
    p.skew = a.skew;
    as_usage([&] { p.validate(); });
    const XiPlan uni = xi_univote(p);
    const XiPlan sim = xi_simvote(p);
    json row = {{"epsilon", eps},
                {"xi_uni", uni.xi},
                {"xi_sim", sim.xi},
                {"feasible_uni", uni.feasible},
                {"feasible_sim", sim.feasible},
                {"ceiling", std::round(error_ceiling(th, eps) * 1e12) / 1e12}};
    if (a.population) row["failure_probability"] = failure_probability(a.failure_base, *a.population);
    out << row.dump() << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string predictions;
  TableInput table;
  std::string truth_column = "truth";
  std::string manifest;
};

std::map<RecordId, bool> read_predictions(const std::string& path) {
  std::map<RecordId, bool> labels;
  const std::string content = read_file(path);
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    ++line_no;
    const std::string_view line(content.data() + start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    RecordId id = 0;
    bool label = false;
    try {
      const json j = json::parse(line);
      j.at("id").get_to(id);
      j.at("label").get_to(label);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!labels.emplace(id, label).second) {
      throw Error(ErrorKind::kDuplicateId,
                  path + ": line " + std::to_string(line_no) + ": duplicate id " + std::to_string(id));
    }
  }
  return labels;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Table table = a.table.load();
  if (!table.has_column(a.truth_column)) throw UsageError("table has no column '" + a.truth_column + "'");
  Metrics metrics = compute_metrics(read_predictions(a.predictions), truth_labels(table, a.truth_column));
  if (!a.manifest.empty()) {
    const json stats = json::parse(read_file(a.manifest)).at("stats");
    stats.at("llm_calls").get_to(metrics.cost.llm_calls);
    stats.at("cache_hits").get_to(metrics.cost.cache_hits);
    stats.at("prompt_tokens").get_to(metrics.cost.prompt_tokens);
    stats.at("completion_tokens").get_to(metrics.cost.completion_tokens);
    stats.at("recluster_rounds").get_to(metrics.cost.recluster_rounds);
    stats.at("fallback_calls").get_to(metrics.cost.fallback_calls);
    stats.at("skew_violations").get_to(metrics.cost.skew_violations);
  }
  out << metrics_to_json(metrics) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string clusters = "14608:0.9942";
  std::size_t dim = 16;
  double separation = 10.0;
  double spread = 1.0;
  std::uint64_t seed = 0;
  std::size_t trials = 200;
  std::string strategy = "uni";
  std::optional<std::size_t> k;
  std::optional<double> xi;
  std::optional<double> epsilon;
  double sigma2 = 0.25;
  double failure_base = 0.9996;
  double skew = 2.0;
  double lb = 0.15;
  std::optional<double> ub;
  std::size_t min_sample = FilterConfig{}.min_sample;
  int max_depth = FilterConfig{}.max_depth;
  std::string fixture_dir;
};

std::vector<SyntheticCluster> parse_cluster_list(const std::string& text, double spread) {
  std::vector<SyntheticCluster> clusters;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string item = text.substr(start, end - start);
    start = end + 1;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError("--clusters expects size:purity items, got '" + item + "'");
    SyntheticCluster c;
    const std::string size = item.substr(0, colon);
    auto [ptr, ec] = std::from_chars(size.data(), size.data() + size.size(), c.size);
    if (ec != std::errc() || ptr != size.data() + size.size() || c.size == 0) {
      throw UsageError("--clusters: bad size '" + size + "'");
    }
    try {
      c.purity = parse_double(item.substr(colon + 1), "--clusters purity");
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (!(c.purity >= 0.0 && c.purity <= 1.0)) throw UsageError("--clusters: purity must lie in [0, 1]");
    c.spread = spread;
    clusters.push_back(std::move(c));
    if (end == text.size()) break;
  }
  return clusters;
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  SyntheticSpec spec;
  spec.clusters = parse_cluster_list(a.clusters, a.spread);
  spec.dim = a.dim;
  spec.separation = a.separation;
  spec.seed = a.seed;
  if (spec.dim < 1) throw UsageError("--dim must be at least 1");

  FilterConfig cfg;
  cfg.k = a.k.value_or(spec.clusters.size());
  if (a.xi) cfg.xi = *a.xi;
  cfg.thresholds = {a.lb, a.ub.value_or(1.0 - a.lb)};
  cfg.min_sample = a.min_sample;
  cfg.max_depth = a.max_depth;
  cfg.skew = a.skew;
  cfg.seed = a.seed;
  as_usage([&] { cfg.strategy = parse_vote_strategy(a.strategy); });
  as_usage([&] { cfg.validate(); });
  std::optional<PlannerParams> planner;
  if (a.epsilon) {
    PlannerParams p;
    p.epsilon = *a.epsilon;
    p.sigma_hat_sq = a.sigma2;
    p.failure_base = a.failure_base;
    p.skew = a.skew;
    as_usage([&] { p.validate(); });
    planner = p;
  }

  json result = {{"command", "simulate"}, {"fixture", nullptr}, {"report", nullptr}};
  if (!a.fixture_dir.empty()) {
    const SyntheticData data = gen_synthetic(spec);
    std::filesystem::create_directories(a.fixture_dir);
    const std::string table_path = (std::filesystem::path(a.fixture_dir) / "table.jsonl").string();
    const std::string emb_path = (std::filesystem::path(a.fixture_dir) / "embeddings.bin").string();
    write_table(data.table, table_path, TableFormat::kJsonl, "id");
    write_embeddings(data.embeddings, emb_path);
    result["fixture"] = {{"table", table_path},
                         {"embeddings", emb_path},
                         {"rows", data.table.size()},
                         {"predicate", synthetic_predicate().text_template()}};
  }
  if (a.trials > 0) {
    result["report"] = json::parse(bound_report_to_json(validate_bound(spec, cfg, planner, a.trials)));
  }
  out << result.dump() << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Clustering-sampling-voting semantic filter over tables", "semfilter"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  EmbedArgs embed;
  auto* embed_cmd = app.add_subcommand("embed", "Embed table rows through an embeddings endpoint");
  add_table_options(embed_cmd, embed.table, true);
  embed_cmd->add_option("--columns", embed.columns, "Columns to embed (default: all)")->delimiter(',');
  embed_cmd->add_option("--out", embed.out, "Output file (binary, or .jsonl)")->required();
  embed_cmd->add_option("--base-url", embed.http.base_url, "Embeddings server")->capture_default_str();
  embed_cmd->add_option("--model", embed.http.model, "Embedding model")->capture_default_str();
  embed_cmd->add_option("--api-key-env", embed.http.api_key_env, "Environment variable holding the API key")
      ->capture_default_str();
  embed_cmd->add_option("--batch-size", embed.options.batch_size, "Texts per request")->capture_default_str();
  embed_cmd->add_option("--parallelism", embed.options.parallelism, "Concurrent requests")
      ->capture_default_str();
  embed_cmd->add_option("--max-chunk-tokens", embed.options.max_chunk_tokens, "Chunk length in tokens")
      ->capture_default_str();

  ClusterArgs cluster;
  auto* cluster_cmd = app.add_subcommand("cluster", "Partition embeddings with seeded k-means");
  cluster_cmd->add_option("--embeddings", cluster.embeddings, "Embedding file")->required();
  add_table_options(cluster_cmd, cluster.table, false);
  cluster_cmd->add_option("--columns", cluster.columns, "Columns for the lexical distance")->delimiter(',');
  cluster_cmd->add_option("--k", cluster.options.k, "Number of clusters")->capture_default_str();
  cluster_cmd->add_option("--seed", cluster.options.seed, "Seed")->capture_default_str();
  cluster_cmd->add_option("--max-iters", cluster.options.max_iters, "Lloyd iteration cap")
      ->capture_default_str();
  cluster_cmd->add_option("--lambda", cluster.options.distance.lambda, "Embedding weight of the distance")
      ->capture_default_str();
  cluster_cmd->add_option("--out", cluster.out, "Partition JSONL (default: stdout)");

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "Tabulate planned sample ratios over error tolerances");
  plan_cmd->add_option("--epsilon", plan.epsilon, "Tolerance or range lo..hi")->capture_default_str();
  plan_cmd->add_option("--step", plan.step, "Range step")->capture_default_str();
  plan_cmd->add_option("--sigma2", plan.sigma2, "Variance estimate")->capture_default_str();
  plan_cmd->add_option("--failure-base", plan.failure_base, "Failure base l")->capture_default_str();
  plan_cmd->add_option("--skew", plan.skew, "Weight skew constant v")->capture_default_str();
  plan_cmd->add_option("--lb", plan.lb, "Lower vote threshold")->capture_default_str();
  plan_cmd->add_option("--ub", plan.ub, "Upper vote threshold (default 1 - lb)");
  plan_cmd->add_option("--population", plan.population, "Cluster size for the failure probability");

  FilterArgs filter;
  auto* filter_cmd = app.add_subcommand("filter", "Label every row of a table under a predicate");
  add_filter_options(filter_cmd, filter);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a filter result against a truth column");
  eval_cmd->add_option("--predictions", eval.predictions, "Filter result JSONL")->required();
  add_table_options(eval_cmd, eval.table, true);
  eval_cmd->add_option("--truth-column", eval.truth_column, "Label column")->capture_default_str();
  eval_cmd->add_option("--manifest", eval.manifest, "Run manifest supplying the cost block");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Check the voting error ceiling on synthetic clusters");
  sim_cmd->add_option("--clusters", sim.clusters, "Comma-separated size:purity list")->capture_default_str();
  sim_cmd->add_option("--dim", sim.dim, "Embedding dimension")->capture_default_str();
  sim_cmd->add_option("--separation", sim.separation, "Centroid scale")->capture_default_str();
  sim_cmd->add_option("--spread", sim.spread, "Per-coordinate standard deviation")->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Seed")->capture_default_str();
  sim_cmd->add_option("--trials", sim.trials, "Filter runs; 0 only writes the fixture")
      ->capture_default_str();
  sim_cmd->add_option("--strategy", sim.strategy, "uni or sim")
      ->check(CLI::IsMember({"uni", "sim"}))
      ->capture_default_str();
  sim_cmd->add_option("--k", sim.k, "Clusters per round (default: number of synthetic clusters)");
  auto* sim_xi = sim_cmd->add_option("--xi", sim.xi, "Sample ratio");
  auto* sim_eps = sim_cmd->add_option("--epsilon", sim.epsilon, "Plan the sample ratio from this tolerance");
  sim_xi->excludes(sim_eps);
  sim_cmd->add_option("--sigma2", sim.sigma2, "Variance estimate for the planner")->capture_default_str();
  sim_cmd->add_option("--failure-base", sim.failure_base, "Failure base l")->capture_default_str();
  sim_cmd->add_option("--skew", sim.skew, "Weight skew constant v")->capture_default_str();
  sim_cmd->add_option("--lb", sim.lb, "Lower vote threshold")->capture_default_str();
  sim_cmd->add_option("--ub", sim.ub, "Upper vote threshold (default 1 - lb)");
  sim_cmd->add_option("--min-sample", sim.min_sample, "Minimum sample size")->capture_default_str();
  sim_cmd->add_option("--max-depth", sim.max_depth, "Re-clustering rounds")->capture_default_str();
  sim_cmd->add_option("--write-fixture", sim.fixture_dir, "Write table.jsonl and embeddings.bin here");

  if (args.empty()) {
    err << app.help();
    emit_error(err, "usage", "no command given");
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << app.help();
    emit_error(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (embed_cmd->parsed()) return cmd_embed(embed, out);
    if (cluster_cmd->parsed()) return cmd_cluster(cluster, out, err);
    if (plan_cmd->parsed()) return cmd_plan(plan, out);
    if (filter_cmd->parsed()) return cmd_filter(filter, filter_cmd, out, err);
    if (eval_cmd->parsed()) return cmd_eval(eval, out);
    if (sim_cmd->parsed()) return cmd_simulate(sim, out);
  } catch (const UsageError& e) {
    emit_error(err, "usage", e.what());
    return kExitUsage;
  } catch (const RunError& e) {
    emit_error(err, e.kind(), e.what(), e.detail());
    return kExitFailure;
  } catch (const Error& e) {
    emit_error(err, std::string(to_string(e.kind())), e.what());
    return kExitFailure;
  } catch (const json::exception& e) {
    emit_error(err, "parse", e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    emit_error(err, "internal", e.what());
    return kExitFailure;
  }
  emit_error(err, "usage", "no command given");
  return kExitUsage;
}

}  // namespace semfilter::cli
