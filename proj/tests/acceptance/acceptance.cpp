// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.
#include "prefquery/prefquery.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace prefquery;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string pad_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%03zu", i);
  return buf;
}

// --- cars golden ---------------------------------------------------------

Outcome cars_golden() {
  IngestConfig cfg;
  cfg.path = std::string(PREFQUERY_DATA_DIR) + "/cars.csv";
  cfg.id_column = "car";
  cfg.label_column = "utility";
  auto t = load_csv(cfg);
  auto scores = make_scored(t.dataset.ids(), *t.labels);

  const double threshold = 164.0 / 1.05;  // 156.19...
  const bool threshold_ok = threshold > 134.0 && threshold < 158.0 && std::abs(threshold - 156.19) < 0.005;
  auto set = indistinguishability_query(scores, 0.05).id_set();
  auto top = top_k(scores, 1).id_set();
  const bool ok = threshold_ok && set == std::set<std::string>{"c1", "c3", "c5"} &&
                  top == std::set<std::string>{"c3"};
  return {ok, "eps=0.05 -> " + std::to_string(set.size()) + " rows, top-1 " + *top.begin()};
}

// --- OLS recovery ----------------------------------------------------------

Outcome ols_recovery() {
  SyntheticSpec spec;
  spec.N = 200;
  spec.m = 3;
  spec.n = 0;
  spec.numeric_weights = {0.8, -1.7, 2.4};
  spec.seed = 2024;
  auto data = generate_synthetic(spec);

  const auto names = data.dataset.names_of(AttributeKind::numerical);
  Eigen::MatrixXd x(spec.N, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    auto col = data.dataset.numerical(names[j]);
    for (std::size_t i = 0; i < spec.N; ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  FeatureMatrix fm{FeatureLayout(names, {}, 0), data.dataset.ids(), x};
  auto fit = fit_numerical(fm, data.labels);

  Eigen::VectorXd b(3), u(static_cast<Eigen::Index>(spec.N));
  double max_coef_err = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    b(static_cast<Eigen::Index>(j)) = fit.coefficients.numerical.at(names[j]);
    max_coef_err = std::max(max_coef_err, std::abs(b(static_cast<Eigen::Index>(j)) - spec.numeric_weights[j]));
  }
  for (std::size_t i = 0; i < spec.N; ++i) u(static_cast<Eigen::Index>(i)) = data.labels[i];

  auto sse = [&](const Eigen::VectorXd& p) { return (u - x * p).squaredNorm(); };
  auto grad = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return -2.0 * x.transpose() * (u - x * p); };
  const double grad_norm = grad(b).lpNorm<Eigen::Infinity>();

  // Central differences away from the optimum, where the gradient is O(1).
  const Eigen::VectorXd p = b + Eigen::Vector3d(0.3, -0.2, 0.1);
  const Eigen::VectorXd g = grad(p);
  double worst_rel = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double h = 1e-6;
    Eigen::VectorXd hi = p, lo = p;
    hi(j) += h;
    lo(j) -= h;
    const double fd = (sse(hi) - sse(lo)) / (2 * h);
    worst_rel = std::max(worst_rel, std::abs(fd - g(j)) / std::max(1e-12, std::abs(g(j))));
  }
  std::ostringstream d;
  d << "max coef err " << max_coef_err << ", |grad|inf " << grad_norm << ", fd rel " << worst_rel;
  return {max_coef_err <= 1e-6 && grad_norm <= 1e-6 && worst_rel <= 1e-4, d.str()};
}

// --- oracle suites -----------------------------------------------------------

Outcome oracle_suites() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t bad_indist = 0, bad_sky = 0, bad_opt = 0;

  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t N = 1 + rng() % 200;
    const double lo = inst % 4 == 0 ? -10.0 : (inst % 4 == 1 ? -1.0 : 0.0);
    std::vector<ScoredTuple> s;
    for (std::size_t i = 0; i < N; ++i) s.push_back({pad_id(i), lo + 10.0 * unit(rng)});
    if (inst % 10 == 0 && N > 2) s[1].score = s[0].score;  // ties
    const double eps = inst % 7 == 0 ? 0.0 : unit(rng);
    double smax = s[0].score;
    for (const auto& t : s) smax = std::max(smax, t.score);
    std::set<std::string> expect;
    for (const auto& t : s) {
      const double thr = smax > 0 ? smax / (1.0 + eps) : smax - eps * std::abs(smax);
      if (t.score >= thr) expect.insert(t.id);
    }
    if (indistinguishability_query(s, eps).id_set() != expect) ++bad_indist;
  }

  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t N = 1 + rng() % 200;
    const std::size_t dims = 1 + rng() % 4;
    const bool grid = inst % 3 == 0;  // small integer grid produces duplicates and ties
    std::vector<AttributeSchema> schema;
    std::vector<Direction> dirs;
    std::vector<std::vector<double>> cols(dims, std::vector<double>(N));
    for (std::size_t d = 0; d < dims; ++d) {
      dirs.push_back(rng() % 2 ? Direction::higher_is_better : Direction::lower_is_better);
      schema.push_back({"a" + std::to_string(d), AttributeKind::numerical, dirs.back()});
      for (auto& v : cols[d]) v = grid ? static_cast<double>(rng() % 4) : unit(rng);
    }
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < N; ++i) ids.push_back(pad_id(i));
    std::vector<Column> columns(cols.begin(), cols.end());
    auto ds = Dataset::from_columns(schema, ids, columns);

    auto better_eq = [&](std::size_t a, std::size_t b, std::size_t d) {
      return dirs[d] == Direction::higher_is_better ? cols[d][a] >= cols[d][b] : cols[d][a] <= cols[d][b];
    };
    auto strictly = [&](std::size_t a, std::size_t b, std::size_t d) {
      return dirs[d] == Direction::higher_is_better ? cols[d][a] > cols[d][b] : cols[d][a] < cols[d][b];
    };
    std::set<std::string> expect;
    for (std::size_t i = 0; i < N; ++i) {
      bool dominated = false;
      for (std::size_t j = 0; j < N && !dominated; ++j) {
        if (i == j) continue;
        bool all = true, any = false;
        for (std::size_t d = 0; d < dims; ++d) {
          all = all && better_eq(j, i, d);
          any = any || strictly(j, i, d);
        }
        dominated = all && any;
      }
      if (!dominated) expect.insert(ids[i]);
    }
    if (skyline(ds).id_set() != expect) ++bad_sky;
  }

  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t N = 1 + rng() % 12;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(4, N);
    const std::size_t dims = 1 + rng() % 3;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(dims));
    std::vector<std::string> names, ids;
    LinearUtility u;
    for (std::size_t d = 0; d < dims; ++d) {
      names.push_back("x" + std::to_string(d));
      u.numerical[names.back()] = 2.0 * unit(rng) - 0.5;
    }
    for (std::size_t i = 0; i < N; ++i) {
      ids.push_back(pad_id(i));
      for (std::size_t d = 0; d < dims; ++d) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = unit(rng);
    }
    FeatureMatrix fm{FeatureLayout(names, {}, 0), ids, x};
    std::vector<double> score(N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t d = 0; d < dims; ++d) {
        score[i] += u.numerical[names[d]] * x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
      }
    }
    // Exhaustive: best total score over all k-subsets.
    double best = -INFINITY;
    std::set<std::string> best_set;
    for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
      double total = 0.0;
      std::set<std::string> chosen;
      for (std::size_t i = 0; i < N; ++i) {
        if (mask & (1u << i)) {
          total += score[i];
          chosen.insert(ids[i]);
        }
      }
      if (total > best) {
        best = total;
        best_set = std::move(chosen);
      }
    }
    if (optimal_subsets(u, fm, k).id_set() != best_set) ++bad_opt;
  }

  std::ostringstream d;
  d << "mismatches: indistinguishability " << bad_indist << "/1000, skyline " << bad_sky
    << "/1000, optimal_subsets " << bad_opt << "/1000";
  return {bad_indist == 0 && bad_sky == 0 && bad_opt == 0, d.str()};
}

// --- error bound -------------------------------------------------------------

Outcome error_bound_properties() {
  const double X = 0.9, H = 1.7;
  std::size_t checked = 0, failures = 0;
  const std::size_t ms[] = {0, 1, 4}, ns[] = {0, 2, 3}, qs[] = {0, 5, 10};
  const double epss[] = {0.0, 0.05, 0.3};
  for (std::size_t N : {1u, 25u, 1000u}) {
    for (std::size_t m : ms)
      for (std::size_t n : ns)
        for (std::size_t q : qs)
          for (double eps : epss) {
            BoundInputs b{m, n, N, q, X, H, eps};
            const double v = compute_error_bound(b);
            const double closed = (static_cast<double>(m) * X + static_cast<double>(n) * H) /
                                      std::sqrt(static_cast<double>(N)) +
                                  static_cast<double>(q) * eps;
            ++checked;
            bool ok = std::abs(v - closed) <= 1e-12;
            auto with = [&](auto f) {
              BoundInputs c = b;
              f(c);
              return compute_error_bound(c);
            };
            ok = ok && with([](BoundInputs& c) { ++c.m; }) >= v;
            ok = ok && with([](BoundInputs& c) { ++c.n; }) >= v;
            ok = ok && with([](BoundInputs& c) { ++c.q; }) >= v;
            ok = ok && with([](BoundInputs& c) { c.eps += 0.01; }) >= v;
            ok = ok && with([](BoundInputs& c) { c.N += 7; }) <= v;
            if (m == 0 && n == 0 && q == 0) ok = ok && v == 0.0;
            if (!ok) ++failures;
          }
  }
  return {failures == 0, std::to_string(checked) + " grid points, " + std::to_string(failures) + " failures"};
}

// --- elicitation closed loop -------------------------------------------------

Outcome elicitation_closed_loop() {
  std::size_t hits = 0, replay_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(trial));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SyntheticSpec spec;
    spec.N = 100;
    spec.m = 3;
    spec.n = 0;
    spec.numeric_weights = {unit(rng), unit(rng), unit(rng)};
    spec.seed = static_cast<std::uint64_t>(trial);
    auto data = generate_synthetic(spec);
    auto ranking = planted_ranking(data);
    auto scaled = rank_scale(data.dataset, ranking);
    HashingEmbedder embedder(4);
    auto sd = std::make_shared<const SessionData>(build_features(scaled.dataset, embedder).matrix);

    // Hidden truth expressed over the rank-scaled features.
    LinearUtility truth, prior;
    for (const auto& [name, w] : data.truth.numerical) {
      auto col = data.dataset.numerical(name);
      auto [mn, mx] = std::minmax_element(col.begin(), col.end());
      truth.numerical[name] = w * (*mx - *mn) / ranking.weight(name);
      prior.numerical[name] = 1.0;
    }
    Session s = start_session("trial" + std::to_string(trial), sd, ranking, prior, 10);
    SimulatedUser user(truth, 0.0, static_cast<std::uint64_t>(trial));
    while (s.status == SessionStatus::collecting) {
      auto [asked, q] = ask_question(std::move(s));
      s = record_answer(std::move(asked), user.answer(q, *sd));
    }
    auto est = top_k(score_tuples(s.estimate, sd->features), 1).ids();
    std::size_t best = 0;
    for (std::size_t i = 1; i < spec.N; ++i) {
      if (data.planted_scores[i] > data.planted_scores[best]) best = i;
    }
    if (est.front() == data.dataset.ids()[best]) ++hits;

    const auto doc = nlohmann::json::parse(session_to_json(s).dump());
    Session replayed = replay_session(doc, sd);
    if (!(replayed.estimate == s.estimate) || session_to_json(replayed).dump() != session_to_json(s).dump()) {
      ++replay_mismatch;
    }
  }
  return {hits >= 90 && replay_mismatch == 0,
          "top-1 agreement " + std::to_string(hits) + "/100, replay mismatches " + std::to_string(replay_mismatch)};
}

// --- text signal dominance ---------------------------------------------------

Outcome text_signal_dominance() {
  std::vector<SyntheticSpec> specs;
  for (std::size_t N : {1000u, 10000u}) {
    SyntheticSpec s;
    s.N = N;
    s.m = 2;
    s.n = 2;
    s.numeric_weights = {1.0, 0.5};
    s.text_weights = {1.0, 1.0};
    s.sigma = 0.05;
    specs.push_back(s);
  }
  if (specs[0].text_weight_share() < 0.5) return {false, "text share below one half"};
  BenchmarkOptions opts;
  opts.k = 10;
  opts.seeds.clear();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) opts.seeds.push_back(seed);
  auto report = run_benchmark(specs, {Strategy::gnn_pipeline, Strategy::numerical_only, Strategy::oracle}, opts);

  bool ok = true;
  std::ostringstream d;
  for (const auto& spec : specs) {
    const auto& g = report.cell("gnn_pipeline", spec.N);
    const auto& n = report.cell("numerical_only", spec.N);
    const auto& o = report.cell("oracle", spec.N);
    for (std::size_t i = 0; i < opts.seeds.size(); ++i) {
      ok = ok && g.precisions[i] && n.precisions[i] && *g.precisions[i] >= *n.precisions[i];
      ok = ok && o.precisions[i] && *o.precisions[i] == 1.0;
    }
    ok = ok && g.mean() && n.mean() && *g.mean() > *n.mean();
    char buf[128];
    std::snprintf(buf, sizeof buf, "%sN=%zu gnn %.3f vs numerical %.3f, oracle %.1f",
                  spec.N == specs.front().N ? "" : "; ", spec.N,
                  g.mean().value_or(-1), n.mean().value_or(-1), o.mean().value_or(-1));
    d << buf;
  }
  return {ok, d.str()};
}

// --- pipeline reproducibility ------------------------------------------------

Outcome pipeline_reproducibility() {
  std::size_t runs = 0, mismatches = 0;
  for (std::uint64_t seed : {3u, 8u, 21u}) {
    for (std::size_t q : {0u, 5u}) {
      SyntheticSpec spec;
      spec.N = 150;
      spec.m = 2;
      spec.n = 1;
      spec.numeric_weights = {1.0, 0.4};
      spec.text_weights = {0.9};
      spec.sigma = 0.1;
      spec.seed = seed;
      auto data = generate_synthetic(spec);
      PipelineOptions opts;
      opts.k = 5;
      opts.embed_dim = 16;
      opts.q_budget = q;
      opts.seed = seed;
      auto first = run_pipeline(data.dataset, planted_ranking(data), data.labels, opts);
      const auto manifest = nlohmann::json::parse(first.manifest.dump());
      auto second = replay_pipeline(manifest, data.dataset, data.labels);
      ++runs;
      const auto b1 = coefficient_vector(first.real.coefficients, first.features.matrix.layout);
      const auto b2 = coefficient_vector(second.real.coefficients, second.features.matrix.layout);
      const bool same = b1.size() == b2.size() &&
                        std::memcmp(b1.data(), b2.data(), sizeof(double) * static_cast<std::size_t>(b1.size())) == 0 &&
                        first.real.coefficients.intercept == second.real.coefficients.intercept &&
                        first.manifest.dump() == second.manifest.dump();
      if (!same) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(runs) + " manifests replayed, " + std::to_string(mismatches) + " mismatches"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"cars_golden", cars_golden},
      {"ols_recovery", ols_recovery},
      {"oracle_equivalence", oracle_suites},
      {"error_bound_properties", error_bound_properties},
      {"elicitation_closed_loop", elicitation_closed_loop},
      {"text_signal_dominance", text_signal_dominance},
      {"pipeline_reproducibility", pipeline_reproducibility},
  };
  int failed = 0;
  for (const auto& [name, run] : checks) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s (%s; %.2fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
