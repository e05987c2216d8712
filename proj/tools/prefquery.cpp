// prefquery command-line driver.
#include "prefquery/prefquery.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefquery;

namespace {

// Shared flags; every one may also come from --config.
struct Common {
  std::optional<double> epsilon;
  std::optional<std::size_t> k;
  std::optional<std::size_t> q_budget;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> embed_dim;
  std::optional<std::string> config_path;
  std::optional<std::string> out;
};

// Looks a key up under [<command>] first, then at top level.
class Settings {
 public:
  Settings(const Common& c, std::string command) : common_(c), command_(std::move(command)) {
    if (c.config_path) config_ = Config::load(*c.config_path);
  }

  std::optional<std::string> str(const std::string& key) const {
    if (auto v = config_.get_string(command_ + "." + key)) return v;
    return config_.get_string(key);
  }
  std::optional<double> num(const std::string& key) const {
    return config_.has(command_ + "." + key) ? config_.get_double(command_ + "." + key) : config_.get_double(key);
  }
  std::optional<long long> integer(const std::string& key) const {
    return config_.has(command_ + "." + key) ? config_.get_int(command_ + "." + key) : config_.get_int(key);
  }
  std::optional<bool> flag(const std::string& key) const {
    return config_.has(command_ + "." + key) ? config_.get_bool(command_ + "." + key) : config_.get_bool(key);
  }

  std::size_t count(const std::optional<std::size_t>& cli, const std::string& key, std::size_t fallback) const {
    if (cli) return *cli;
    if (auto v = integer(key)) {
      require(*v >= 0, ErrorKind::validation, "config key '" + key + "' must be nonnegative");
      return static_cast<std::size_t>(*v);
    }
    return fallback;
  }
  double real(const std::optional<double>& cli, const std::string& key, double fallback) const {
    if (cli) return *cli;
    return num(key).value_or(fallback);
  }

  std::size_t k(std::size_t fallback) const { return count(common_.k, "k", fallback); }
  double epsilon() const { return real(common_.epsilon, "epsilon", 0.05); }
  std::size_t q_budget() const { return count(common_.q_budget, "q_budget", 0); }
  std::uint64_t seed(std::uint64_t fallback) const {
    return common_.seed ? *common_.seed : static_cast<std::uint64_t>(count(std::nullopt, "seed", fallback));
  }
  std::size_t embed_dim() const { return count(common_.embed_dim, "embed_dim", kDefaultEmbedDim); }
  std::optional<std::string> out() const { return common_.out ? common_.out : str("out"); }

  PipelineOptions pipeline() const {
    PipelineOptions o;
    o.k = k(o.k);
    o.epsilon = epsilon();
    o.q_budget = q_budget();
    o.seed = seed(0);
    o.embed_dim = embed_dim();
    o.include_text = flag("include_text").value_or(true);
    o.gnn.layers = count(std::nullopt, "gnn.layers", o.gnn.layers);
    o.gnn.self_weight = real(std::nullopt, "gnn.self_weight", o.gnn.self_weight);
    o.graph.cross_kind_weight = real(std::nullopt, "graph.cross_kind_weight", o.graph.cross_kind_weight);
    o.ridge.lambda = real(std::nullopt, "ridge.lambda", o.ridge.lambda);
    o.elicitation = elicitation();
    if (auto b = num("bound_eps")) o.bound_eps = *b;
    return o;
  }

  ElicitationConfig elicitation() const {
    ElicitationConfig e;
    e.lambda = real(std::nullopt, "elicitation.lambda", e.lambda);
    e.margin = real(std::nullopt, "elicitation.margin", e.margin);
    e.indifferent_weight = real(std::nullopt, "elicitation.indifferent_weight", e.indifferent_weight);
    e.pool_size = count(std::nullopt, "elicitation.pool_size", e.pool_size);
    return e;
  }

 private:
  Common common_;
  std::string command_;
  Config config_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    auto t = csv::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::vector<double> number_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    auto v = csv::parse_number(item);
    require(v.has_value(), ErrorKind::validation, "'" + item + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

struct TableArgs {
  std::string path;
  std::optional<std::string> id_column;
  std::optional<std::string> label_column;
  std::string lower_better;
  std::string delimiter = ",";

  void add_to(CLI::App* cmd) {
    cmd->add_option("csv", path, "Input CSV file")->required();
    cmd->add_option("--id-column", id_column, "Column holding tuple ids");
    cmd->add_option("--label-column", label_column, "Column holding utility labels");
    cmd->add_option("--lower-better", lower_better, "Comma-separated columns where lower is better");
    cmd->add_option("--delimiter", delimiter, "Field delimiter")->default_val(",");
  }

  LoadedTable load(const Settings& s) const {
    IngestConfig cfg;
    cfg.path = path;
    require(delimiter.size() == 1, ErrorKind::validation, "delimiter must be one character");
    cfg.delimiter = delimiter.front();
    cfg.id_column = id_column ? id_column : s.str("id_column");
    cfg.label_column = label_column ? label_column : s.str("label_column");
    for (const auto& c : split_list(lower_better.empty() ? s.str("lower_better").value_or("") : lower_better)) {
      cfg.direction_overrides[c] = Direction::lower_is_better;
    }
    return load_csv(cfg);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::validation, path.string() + ": " + e.what());
  }
}

json schema_json(const Dataset& d) {
  json out = json::array();
  for (const auto& a : d.schema()) {
    out.push_back({{"name", a.name},
                   {"kind", std::string(to_string(a.kind))},
                   {"direction", std::string(to_string(a.direction))}});
  }
  return out;
}

// External embedder when PREFQUERY_EMBED_URL is set, hashing otherwise.
struct EmbedderChoice {
  std::unique_ptr<EmbeddingCache> cache;
  std::unique_ptr<Embedder> embedder;
};

EmbedderChoice choose_embedder(const Settings& s, std::size_t dim) {
  EmbedderChoice c;
  if (auto endpoint = resolve_endpoint(s.str("embed_url"))) {
    auto cache_path = s.str("embed_cache");
    c.cache = cache_path ? std::make_unique<EmbeddingCache>(*cache_path) : std::make_unique<EmbeddingCache>();
    c.embedder = std::make_unique<ServiceEmbedder>(*endpoint, dim, *c.cache);
  } else {
    c.embedder = std::make_unique<HashingEmbedder>(dim);
  }
  return c;
}

json pipeline_summary(const PipelineResult& r) {
  return {{"label_source", r.label_source},
          {"u_real", utility_to_json(r.real.coefficients)},
          {"sse", r.real.sse},
          {"optimal", r.manifest.at("result").at("optimal")},
          {"indistinguishable", r.manifest.at("result").at("indistinguishable")},
          {"bound", r.manifest.at("bound")},
          {"questions_answered", r.bound_inputs.q},
          {"warnings", r.scaled.warnings}};
}

// --- subcommands -------------------------------------------------------

int cmd_ingest(const Common& common, const TableArgs& table) {
  Settings s(common, "ingest");
  auto t = table.load(s);
  json out{{"rows", t.dataset.size()}, {"schema", schema_json(t.dataset)}, {"fingerprint", t.dataset.fingerprint()}};
  if (t.labels) out["label_column"] = t.label_name;
  if (auto path = s.out()) {
    write_text(*path, format_csv(t.dataset, t.labels ? &*t.labels : nullptr, t.label_name));
    out["written"] = *path;
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

struct SynthArgs {
  std::optional<std::size_t> rows;
  std::optional<std::string> numeric_weights;
  std::optional<std::string> text_weights;
  std::optional<double> sigma;
};

SyntheticSpec synth_spec(const Settings& s, const SynthArgs& a) {
  SyntheticSpec spec;
  spec.N = s.count(a.rows, "rows", 1000);
  spec.numeric_weights = number_list(a.numeric_weights.value_or(s.str("numeric_weights").value_or("1,0.5")));
  spec.text_weights = number_list(a.text_weights.value_or(s.str("text_weights").value_or("1")));
  spec.m = spec.numeric_weights.size();
  spec.n = spec.text_weights.size();
  spec.sigma = s.real(a.sigma, "sigma", 0.0);
  return spec;
}

int cmd_synth(const Common& common, const SynthArgs& args) {
  Settings s(common, "synth");
  auto spec = synth_spec(s, args);
  spec.seed = s.seed(0);
  auto data = generate_synthetic(spec);
  auto path = s.out();
  require(path.has_value(), ErrorKind::validation, "synth needs --out");
  write_csv(data.dataset, *path, &data.labels, "label");
  json truth{{"written", *path},
             {"rows", spec.N},
             {"seed", spec.seed},
             {"sigma", spec.sigma},
             {"truth", utility_to_json(data.truth)},
             {"ranking", planted_ranking(data).order}};
  std::cout << truth.dump(2) << '\n';
  return 0;
}

int cmd_pipeline(const Common& common, const TableArgs& table, const std::string& ranking_arg,
                 const std::optional<std::string>& replay) {
  Settings s(common, "pipeline");
  auto t = table.load(s);
  PipelineResult r;
  if (replay) {
    const json manifest = read_json(*replay);
    const auto id = manifest.value("embedder", std::string());
    if (id.rfind("service:", 0) == 0) {
      auto c = choose_embedder(s, manifest.at("options").at("embed_dim").get<std::size_t>());
      r = replay_pipeline(manifest, t.dataset, t.labels, *c.embedder);
    } else {
      r = replay_pipeline(manifest, t.dataset, t.labels);
    }
    const bool same = r.manifest.at("result").at("u_real") == manifest.at("result").at("u_real");
    require(same, ErrorKind::numerical, "replayed coefficients differ from the manifest");
  } else {
    std::vector<std::string> order = split_list(ranking_arg.empty() ? s.str("ranking").value_or("") : ranking_arg);
    if (order.empty()) {
      for (const auto& a : t.dataset.schema()) order.push_back(a.name);
    }
    auto ranking = make_ranking(t.dataset.schema(), order);
    auto opts = s.pipeline();
    auto c = choose_embedder(s, opts.embed_dim);
    r = run_pipeline(t.dataset, ranking, t.labels, opts, *c.embedder);
  }
  if (auto path = s.out()) write_text(*path, r.manifest.dump(2) + "\n");
  std::cout << pipeline_summary(r).dump(2) << '\n';
  return 0;
}

struct BenchArgs {
  SynthArgs synth;
  std::optional<std::string> sizes;
  std::optional<std::size_t> repeats;
  std::optional<std::string> strategies;
  std::optional<std::size_t> threads;
};

int cmd_bench(const Common& common, const BenchArgs& a) {
  Settings s(common, "bench");
  auto base = synth_spec(s, a.synth);
  base.sigma = s.real(a.synth.sigma, "sigma", 0.05);
  std::vector<SyntheticSpec> specs;
  for (double n : number_list(a.sizes.value_or(s.str("sizes").value_or("1000,10000,100000")))) {
    require(n >= 1 && n == std::floor(n), ErrorKind::validation, "sizes must be positive integers");
    base.N = static_cast<std::size_t>(n);
    specs.push_back(base);
  }
  std::vector<Strategy> strategies;
  const auto names = a.strategies ? *a.strategies : s.str("strategies").value_or("");
  if (names.empty()) {
    strategies.assign(std::begin(kAllStrategies), std::end(kAllStrategies));
    strategies.push_back(Strategy::oracle);
  } else {
    for (const auto& n : split_list(names)) strategies.push_back(parse_strategy(n));
  }
  BenchmarkOptions opts;
  opts.k = s.k(10);
  opts.pipeline = s.pipeline();
  opts.threads = s.count(a.threads, "threads", 0);
  const std::uint64_t first = s.seed(1);
  opts.seeds.clear();
  for (std::size_t i = 0; i < s.count(a.repeats, "repeats", 10); ++i) opts.seeds.push_back(first + i);

  auto report = run_benchmark(specs, strategies, opts);
  if (auto path = s.out()) {
    export_report(report, *path, fs::path(*path).extension() == ".csv" ? ReportFormat::csv : ReportFormat::json);
  }
  std::cout << report_to_json(report).dump(2) << '\n';
  return 0;
}

int cmd_report(const Common& common, const std::string& path) {
  Settings s(common, "report");
  auto report = load_report(path);
  std::printf("%-26s %8s %10s %8s\n", "strategy", "N", "mean", "failed");
  for (const auto& c : report.cells) {
    auto mean = c.mean();
    if (mean) {
      std::printf("%-26s %8zu %10.4f %8zu\n", c.strategy.c_str(), c.N, *mean, c.errors.size());
    } else {
      std::printf("%-26s %8zu %10s %8zu\n", c.strategy.c_str(), c.N, "-", c.errors.size());
    }
  }
  if (auto out = s.out()) {
    export_report(report, *out, fs::path(*out).extension() == ".csv" ? ReportFormat::csv : ReportFormat::json);
  }
  return 0;
}

struct ServeArgs {
  std::vector<std::string> datasets;  // name=path
  std::optional<int> port;
  std::string host = "127.0.0.1";
  std::optional<std::string> state_dir;
  std::optional<std::string> id_column;
  std::optional<std::string> label_column;  // excluded from the served attributes
};

int cmd_serve(const Common& common, const ServeArgs& a) {
  Settings s(common, "serve");
  std::vector<std::pair<std::string, std::string>> specs;
  for (const auto& d : a.datasets) {
    auto eq = d.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::validation, "--dataset expects name=path, got '" + d + "'");
    specs.emplace_back(d.substr(0, eq), d.substr(eq + 1));
  }
  if (common.config_path) {
    for (const auto& [name, path] : Config::load(*common.config_path).section("datasets")) specs.emplace_back(name, path);
  }
  require(!specs.empty(), ErrorKind::validation, "serve needs at least one --dataset name=path");

  std::vector<ServedDataset> served;
  for (const auto& [name, path] : specs) {
    IngestConfig cfg;
    cfg.path = path;
    cfg.id_column = a.id_column ? a.id_column : s.str("id_column");
    cfg.label_column = a.label_column ? a.label_column : s.str("label_column");
    served.push_back({name, load_csv(cfg).dataset});
  }
  ServerOptions opts;
  if (auto dir = a.state_dir ? a.state_dir : s.str("state_dir")) opts.state_dir = *dir;
  opts.embed_dim = s.embed_dim();
  opts.elicitation = s.elicitation();

  std::optional<int> port = a.port;
  if (!port) {
    if (auto p = s.integer("port")) port = static_cast<int>(*p);
  }
  SessionService service(std::move(served), opts);
  HttpServer server(service);
  const int bound = server.bind(a.host, resolve_port(port));
  std::cerr << "listening on http://" << a.host << ":" << bound << '\n';
  server.listen_after_bind();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-aware top-k and indistinguishability queries"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--epsilon", common.epsilon, "Indistinguishability tolerance");
    cmd->add_option("--k", common.k, "Result size");
    cmd->add_option("--q-budget", common.q_budget, "Comparison question budget");
    cmd->add_option("--seed", common.seed, "Random seed");
    cmd->add_option("--embed-dim", common.embed_dim, "Text embedding dimension");
    cmd->add_option("--config", common.config_path, "key = value config file");
    cmd->add_option("--out", common.out, "Output path");
  };

  TableArgs table;
  auto* ingest = app.add_subcommand("ingest", "Load a CSV and report the inferred schema");
  table.add_to(ingest);
  add_common(ingest);

  SynthArgs synth;
  auto add_synth = [](CLI::App* cmd, SynthArgs& a) {
    cmd->add_option("--rows", a.rows, "Tuples per dataset");
    cmd->add_option("--numeric-weights", a.numeric_weights, "Planted numerical weights, comma-separated");
    cmd->add_option("--text-weights", a.text_weights, "Planted textual weights, comma-separated");
    cmd->add_option("--sigma", a.sigma, "Label noise standard deviation");
  };
  auto* synth_cmd = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  add_synth(synth_cmd, synth);
  add_common(synth_cmd);

  TableArgs ptable;
  std::string ranking;
  std::optional<std::string> replay;
  auto* pipeline = app.add_subcommand("pipeline", "Run the end-to-end estimation pipeline");
  ptable.add_to(pipeline);
  pipeline->add_option("--ranking", ranking, "Attributes best first, comma-separated");
  pipeline->add_option("--replay", replay, "Rerun from a manifest");
  add_common(pipeline);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Precision benchmark on planted data");
  add_synth(bench_cmd, bench.synth);
  bench_cmd->add_option("--sizes", bench.sizes, "Tuple counts, comma-separated");
  bench_cmd->add_option("--repeats", bench.repeats, "Seeds per cell, starting at --seed");
  bench_cmd->add_option("--strategies", bench.strategies, "Strategies, comma-separated");
  bench_cmd->add_option("--threads", bench.threads, "Worker threads (0: all cores)");
  add_common(bench_cmd);

  std::string report_path;
  auto* report = app.add_subcommand("report", "Summarize a benchmark report");
  report->add_option("report", report_path, "Report JSON")->required();
  add_common(report);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the elicitation HTTP service");
  serve_cmd->add_option("--dataset", serve.datasets, "name=path, repeatable");
  serve_cmd->add_option("--port", serve.port, "Listen port (env PREFQUERY_PORT, default 8080)");
  serve_cmd->add_option("--host", serve.host, "Listen address")->default_val("127.0.0.1");
  serve_cmd->add_option("--state-dir", serve.state_dir, "Directory for persisted sessions");
  serve_cmd->add_option("--id-column", serve.id_column, "Column holding tuple ids");
  serve_cmd->add_option("--label-column", serve.label_column, "Column to leave out of the served attributes");
  add_common(serve_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*ingest) return cmd_ingest(common, table);
    if (*synth_cmd) return cmd_synth(common, synth);
    if (*pipeline) return cmd_pipeline(common, ptable, ranking, replay);
    if (*bench_cmd) return cmd_bench(common, bench);
    if (*report) return cmd_report(common, report_path);
    if (*serve_cmd) return cmd_serve(common, serve);
  } catch (const StageError& e) {
    std::cerr << "error [" << to_string(e.kind()) << "] in stage " << e.stage() << ": " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
