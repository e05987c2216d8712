#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/error.hpp"
#include "prefquery/harness/csv.hpp"
#include "prefquery/harness/pipeline.hpp"
#include "prefquery/harness/synthetic.hpp"
#include "prefquery/queries.hpp"

namespace prefquery {

enum class Strategy {
  gnn_pipeline,
  numerical_only,
  top_k_baseline,
  skyline_baseline,
  multi_objective_weighted,
  oracle,
};

inline constexpr Strategy kAllStrategies[] = {
    Strategy::gnn_pipeline,     Strategy::numerical_only,           Strategy::top_k_baseline,
    Strategy::skyline_baseline, Strategy::multi_objective_weighted,
};

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::gnn_pipeline: return "gnn_pipeline";
    case Strategy::numerical_only: return "numerical_only";
    case Strategy::top_k_baseline: return "top_k_baseline";
    case Strategy::skyline_baseline: return "skyline_baseline";
    case Strategy::multi_objective_weighted: return "multi_objective_weighted";
    case Strategy::oracle: return "oracle";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view s) {
  for (Strategy st : {Strategy::gnn_pipeline, Strategy::numerical_only, Strategy::top_k_baseline,
                      Strategy::skyline_baseline, Strategy::multi_objective_weighted, Strategy::oracle}) {
    if (to_string(st) == s) return st;
  }
  fail(ErrorKind::validation, "unknown strategy '" + std::string(s) + "'");
}

// One (spec, strategy) cell: precision per seed, in seed order.
struct PrecisionCell {
  std::string strategy;
  std::size_t N = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::optional<double>> precisions;
  std::vector<std::string> errors;  // "seed: message" for failed runs

  // Mean over successful seeds; nullopt when every seed failed.
  std::optional<double> mean() const {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& p : precisions) {
      if (p) {
        total += *p;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return total / static_cast<double>(count);
  }

  bool operator==(const PrecisionCell&) const = default;
};

struct PrecisionReport {
  std::size_t k = 0;
  std::vector<std::string> strategies;
  std::vector<std::size_t> sizes;
  std::vector<std::uint64_t> seeds;
  std::vector<PrecisionCell> cells;  // spec-major, then strategy

  const PrecisionCell& cell(std::string_view strategy, std::size_t N) const {
    for (const auto& c : cells) {
      if (c.strategy == strategy && c.N == N) return c;
    }
    fail(ErrorKind::validation, "report has no cell for " + std::string(strategy) + " at N=" +
                                    std::to_string(N));
  }

  bool operator==(const PrecisionReport&) const = default;
};

struct BenchmarkOptions {
  std::size_t k = 10;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  PipelineOptions pipeline;
  std::size_t threads = 0;  // 0: hardware concurrency
};

namespace detail {

inline std::vector<ScoredTuple> sum_of_columns(const Dataset& d,
                                               const std::vector<std::vector<double>>& columns) {
  std::vector<double> scores(d.size(), 0.0);
  for (const auto& col : columns) {
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] += col[i];
  }
  return make_scored(d.ids(), scores);
}

// Retrieved id set for one strategy on one generated dataset.
inline std::set<std::string> retrieve(Strategy strategy, const SyntheticData& data,
                                      const RankingInput& ranking, const BenchmarkOptions& opts) {
  const Dataset& d = data.dataset;
  switch (strategy) {
    case Strategy::gnn_pipeline:
    case Strategy::numerical_only: {
      PipelineOptions p = opts.pipeline;
      p.k = opts.k;
      p.include_text = strategy == Strategy::gnn_pipeline;
      return run_pipeline(d, ranking, data.labels, p).optimal.id_set();
    }
    case Strategy::top_k_baseline: {
      std::vector<std::vector<double>> cols;
      for (const auto& a : d.schema()) {
        if (a.kind == AttributeKind::numerical) cols.push_back(minmax_normalize(d.numerical(a.name), a.direction));
      }
      require(!cols.empty(), ErrorKind::domain, "top-k baseline needs numerical attributes");
      return top_k(sum_of_columns(d, cols), opts.k).id_set();
    }
    case Strategy::multi_objective_weighted: {
      const auto scaled = rank_scale(d, ranking);
      std::vector<std::vector<double>> cols;
      for (const auto& name : d.names_of(AttributeKind::numerical)) {
        auto c = scaled.dataset.numerical(name);
        cols.emplace_back(c.begin(), c.end());
      }
      require(!cols.empty(), ErrorKind::domain, "multi-objective baseline needs numerical attributes");
      return top_k(sum_of_columns(d, cols), opts.k).id_set();
    }
    case Strategy::skyline_baseline:
      return skyline(d).id_set();
    case Strategy::oracle:
      return top_k(make_scored(d.ids(), data.planted_scores), opts.k).id_set();
  }
  fail(ErrorKind::internal, "unhandled strategy");
}

}  // namespace detail

// For every spec and seed: generate data, take relevant = planted top-k,
// and record each strategy's precision. Failures are recorded per cell.
// Work items run on a thread pool; results land in fixed slots, so the
// report does not depend on scheduling.
inline PrecisionReport run_benchmark(const std::vector<SyntheticSpec>& specs,
                                     const std::vector<Strategy>& strategies,
                                     const BenchmarkOptions& opts) {
  require(!specs.empty(), ErrorKind::validation, "benchmark needs at least one spec");
  require(!strategies.empty(), ErrorKind::validation, "benchmark needs at least one strategy");
  require(!opts.seeds.empty(), ErrorKind::validation, "benchmark needs at least one seed");
  require(opts.k >= 1, ErrorKind::validation, "benchmark k must be >= 1");

  PrecisionReport report;
  report.k = opts.k;
  report.seeds = opts.seeds;
  for (Strategy s : strategies) report.strategies.emplace_back(to_string(s));
  for (const auto& spec : specs) {
    report.sizes.push_back(spec.N);
    for (Strategy s : strategies) {
      PrecisionCell cell;
      cell.strategy = std::string(to_string(s));
      cell.N = spec.N;
      cell.seeds = opts.seeds;
      cell.precisions.assign(opts.seeds.size(), std::nullopt);
      report.cells.push_back(std::move(cell));
    }
  }

  const std::size_t jobs = specs.size() * opts.seeds.size();
  std::vector<std::vector<std::string>> errors(report.cells.size() * opts.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const std::size_t si = job / opts.seeds.size();
      const std::size_t ki = job % opts.seeds.size();
      SyntheticSpec spec = specs[si];
      spec.seed = opts.seeds[ki];
      std::optional<SyntheticData> data;
      std::optional<RankingInput> ranking;
      std::set<std::string> relevant;
      std::string setup_error;
      try {
        data = generate_synthetic(spec);
        ranking = planted_ranking(*data);
        relevant = top_k(make_scored(data->dataset.ids(), data->planted_scores), opts.k).id_set();
      } catch (const Error& e) {
        setup_error = e.what();
      }
      for (std::size_t st = 0; st < strategies.size(); ++st) {
        const std::size_t ci = si * strategies.size() + st;
        auto& slot = report.cells[ci].precisions[ki];
        auto& err = errors[ci * opts.seeds.size() + ki];
        if (!setup_error.empty()) {
          err.push_back(std::to_string(spec.seed) + ": " + setup_error);
          continue;
        }
        try {
          slot = precision(detail::retrieve(strategies[st], *data, *ranking, opts), relevant);
        } catch (const Error& e) {
          err.push_back(std::to_string(spec.seed) + ": " + e.what());
        }
      }
    }
  };
  std::size_t threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t ci = 0; ci < report.cells.size(); ++ci) {
    for (std::size_t ki = 0; ki < opts.seeds.size(); ++ki) {
      for (auto& e : errors[ci * opts.seeds.size() + ki]) report.cells[ci].errors.push_back(std::move(e));
    }
  }
  return report;
}

// --- report serialization ------------------------------------------------

inline constexpr int kReportVersion = 1;

inline nlohmann::json report_to_json(const PrecisionReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json precisions = nlohmann::json::array();
    for (const auto& p : c.precisions) precisions.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
    auto mean = c.mean();
    cells.push_back({{"strategy", c.strategy},
                     {"N", c.N},
                     {"seeds", c.seeds},
                     {"precision", precisions},
                     {"mean", mean ? nlohmann::json(*mean) : nlohmann::json(nullptr)},
                     {"errors", c.errors}});
  }
  return {{"version", kReportVersion},
          {"k", r.k},
          {"strategies", r.strategies},
          {"sizes", r.sizes},
          {"seeds", r.seeds},
          {"cells", cells}};
}

inline PrecisionReport report_from_json(const nlohmann::json& j) {
  try {
    require(j.at("version").get<int>() == kReportVersion, ErrorKind::validation,
            "unsupported report version");
    PrecisionReport r;
    r.k = j.at("k").get<std::size_t>();
    r.strategies = j.at("strategies").get<std::vector<std::string>>();
    r.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& c : j.at("cells")) {
      PrecisionCell cell;
      cell.strategy = c.at("strategy").get<std::string>();
      cell.N = c.at("N").get<std::size_t>();
      cell.seeds = c.at("seeds").get<std::vector<std::uint64_t>>();
      for (const auto& p : c.at("precision")) {
        cell.precisions.push_back(p.is_null() ? std::nullopt : std::optional<double>(p.get<double>()));
      }
      cell.errors = c.at("errors").get<std::vector<std::string>>();
      r.cells.push_back(std::move(cell));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("malformed report: ") + e.what());
  }
}

// Columns: strategy,N,seed,precision. Failed runs leave precision empty.
inline std::string report_to_csv(const PrecisionReport& r) {
  std::string out = "strategy,N,seed,precision\n";
  for (const auto& c : r.cells) {
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      out += c.strategy + "," + std::to_string(c.N) + "," + std::to_string(c.seeds[i]) + ",";
      if (i < c.precisions.size() && c.precisions[i]) out += csv::format_number(*c.precisions[i]);
      out += "\n";
    }
  }
  return out;
}

enum class ReportFormat { json, csv };

inline void export_report(const PrecisionReport& r, const std::filesystem::path& path,
                          ReportFormat format) {
  require(!r.strategies.empty(), ErrorKind::validation, "report has no strategies");
  require(r.cells.size() == r.strategies.size() * r.sizes.size(), ErrorKind::validation,
          "report is incomplete");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << (format == ReportFormat::json ? report_to_json(r).dump(2) + "\n" : report_to_csv(r));
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

inline PrecisionReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::validation, path.string() + ": " + e.what());
  }
}

}  // namespace prefquery
