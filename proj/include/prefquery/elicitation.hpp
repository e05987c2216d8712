#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/error.hpp"
#include "prefquery/queries.hpp"

namespace prefquery {

enum class Choice { prefer_a, prefer_b, indifferent };
enum class SessionStatus { collecting, converged, exhausted };

inline std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::prefer_a: return "prefer_a";
    case Choice::prefer_b: return "prefer_b";
    case Choice::indifferent: return "indifferent";
  }
  return "unknown";
}

inline Choice parse_choice(std::string_view s) {
  if (s == "prefer_a") return Choice::prefer_a;
  if (s == "prefer_b") return Choice::prefer_b;
  if (s == "indifferent") return Choice::indifferent;
  fail(ErrorKind::validation, "unknown choice '" + std::string(s) + "'");
}

inline std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::collecting: return "collecting";
    case SessionStatus::converged: return "converged";
    case SessionStatus::exhausted: return "exhausted";
  }
  return "unknown";
}

inline SessionStatus parse_status(std::string_view s) {
  if (s == "collecting") return SessionStatus::collecting;
  if (s == "converged") return SessionStatus::converged;
  if (s == "exhausted") return SessionStatus::exhausted;
  fail(ErrorKind::validation, "unknown session status '" + std::string(s) + "'");
}

struct ComparisonQuestion {
  std::size_t index = 0;
  std::string a;
  std::string b;

  bool operator==(const ComparisonQuestion&) const = default;
};

struct ComparisonAnswer {
  std::size_t index = 0;
  Choice choice = Choice::indifferent;

  bool operator==(const ComparisonAnswer&) const = default;
};

// One answered comparison, by tuple id.
struct Comparison {
  std::string a;
  std::string b;
  Choice choice = Choice::indifferent;
};

struct ElicitationConfig {
  double lambda = 0.01;             // pull toward the prior
  double margin = 1.0;              // squared-hinge margin for strict preferences
  double indifferent_weight = 0.1;  // relative weight of equality constraints
  std::size_t pool_size = 20;       // question candidates: current top tuples
  std::size_t max_sweeps = 1000;
  double tolerance = 1e-12;
  double min_lambda = 1e-10;        // floor when relaxing lambda to honor answers
};

// Feature rows plus an id index, shared read-only between session snapshots.
struct SessionData {
  FeatureMatrix features;
  std::unordered_map<std::string, std::size_t> row_of;

  explicit SessionData(FeatureMatrix fm) : features(std::move(fm)) {
    for (std::size_t i = 0; i < features.ids.size(); ++i) row_of.emplace(features.ids[i], i);
  }

  std::size_t row(const std::string& id) const {
    auto it = row_of.find(id);
    require(it != row_of.end(), ErrorKind::validation, "unknown tuple id '" + id + "'");
    return it->second;
  }
};

struct Session {
  std::string id;
  std::string dataset_name;
  std::string dataset_fingerprint;
  RankingInput ranking;
  std::shared_ptr<const SessionData> data;
  std::vector<ComparisonQuestion> questions;
  std::vector<ComparisonAnswer> answers;  // in the order recorded
  std::size_t q_budget = 0;
  LinearUtility prior;
  LinearUtility estimate;
  SessionStatus status = SessionStatus::collecting;
  ElicitationConfig config;

  bool answered(std::size_t index) const {
    return std::any_of(answers.begin(), answers.end(),
                       [&](const auto& a) { return a.index == index; });
  }

  // The asked question still awaiting an answer, if any.
  const ComparisonQuestion* outstanding() const {
    for (const auto& q : questions) {
      if (!answered(q.index)) return &q;
    }
    return nullptr;
  }
};

inline Session start_session(std::string id, std::shared_ptr<const SessionData> data,
                             RankingInput ranking, LinearUtility prior, std::size_t q_budget,
                             ElicitationConfig config = {}) {
  require(data != nullptr && data->features.rows() >= 2, ErrorKind::validation,
          "an elicitation session needs at least two tuples");
  coefficient_vector(prior, data->features.layout);
  Session s;
  s.id = std::move(id);
  s.ranking = std::move(ranking);
  s.data = std::move(data);
  s.q_budget = q_budget;
  s.prior = prior;
  s.estimate = std::move(prior);
  s.config = config;
  s.status = q_budget == 0 ? SessionStatus::exhausted : SessionStatus::collecting;
  return s;
}

struct ComparisonFit {
  LinearUtility utility;
  std::vector<double> objective_trace;  // objective after each sweep, starting at the prior
};

namespace detail {

struct ComparisonProblem {
  Eigen::MatrixXd diffs;        // one row per comparison: fv_first - fv_second
  std::vector<bool> strict;     // true: hinge on diffs row; false: equality
  Eigen::VectorXd prior;
  double lambda = 0.0;
  double margin = 1.0;
  double indifferent_weight = 0.1;

  double objective(const Eigen::VectorXd& w) const {
    double f = lambda * (w - prior).squaredNorm();
    for (Eigen::Index c = 0; c < diffs.rows(); ++c) {
      const double s = diffs.row(c).dot(w);
      if (strict[static_cast<std::size_t>(c)]) {
        const double r = std::max(0.0, margin - s);
        f += r * r;
      } else {
        f += indifferent_weight * s * s;
      }
    }
    return f;
  }
};

// Exact minimizer of the objective along coordinate j, given s = diffs * w.
// The derivative is piecewise linear and nondecreasing with breakpoints where
// hinge terms switch on or off.
inline double coordinate_minimizer(const ComparisonProblem& p, const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& s, Eigen::Index j) {
  const double wj = w(j);
  auto derivative = [&](double t) {
    double g = 2.0 * p.lambda * (t - p.prior(j));
    for (Eigen::Index c = 0; c < p.diffs.rows(); ++c) {
      const double d = p.diffs(c, j);
      if (d == 0.0) continue;
      const double sc = s(c) + d * (t - wj);
      if (p.strict[static_cast<std::size_t>(c)]) {
        g -= 2.0 * d * std::max(0.0, p.margin - sc);
      } else {
        g += 2.0 * p.indifferent_weight * d * sc;
      }
    }
    return g;
  };

  std::vector<double> points{wj};
  for (Eigen::Index c = 0; c < p.diffs.rows(); ++c) {
    const double d = p.diffs(c, j);
    if (d != 0.0 && p.strict[static_cast<std::size_t>(c)]) {
      points.push_back(wj + (p.margin - s(c)) / d);
    }
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::vector<double> g(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) g[i] = derivative(points[i]);

  auto first_nonneg = std::find_if(g.begin(), g.end(), [](double v) { return v >= 0.0; });
  const auto idx = static_cast<std::size_t>(first_nonneg - g.begin());
  if (idx < g.size() && g[idx] == 0.0) return points[idx];
  if (idx == 0) {
    // Root lies left of every breakpoint, where the derivative is affine.
    const double slope = g[0] - derivative(points[0] - 1.0);
    return slope > 0.0 ? points[0] - g[0] / slope : wj;
  }
  if (idx == g.size()) {
    const double last = points.back();
    const double slope = derivative(last + 1.0) - g.back();
    return slope > 0.0 ? last - g.back() / slope : wj;
  }
  const double t0 = points[idx - 1], t1 = points[idx];
  const double g0 = g[idx - 1], g1 = g[idx];
  return t0 - g0 * (t1 - t0) / (g1 - g0);
}

}  // namespace detail

// Minimizes
//   sum_strict max(0, margin - w.(fv_winner - fv_loser))^2
//   + indifferent_weight * sum_indifferent (w.(fv_a - fv_b))^2
//   + lambda ||w - prior||^2
// by cyclic exact coordinate descent from the prior. The intercept is kept
// from the prior since it cancels in every difference.
inline ComparisonFit fit_from_comparisons_traced(std::span<const Comparison> comparisons,
                                                 const SessionData& data,
                                                 const LinearUtility& prior,
                                                 const ElicitationConfig& cfg = {}) {
  const auto& fm = data.features;
  detail::ComparisonProblem p;
  p.prior = coefficient_vector(prior, fm.layout);
  p.lambda = cfg.lambda;
  p.margin = cfg.margin;
  p.indifferent_weight = cfg.indifferent_weight;
  p.diffs.resize(static_cast<Eigen::Index>(comparisons.size()), p.prior.size());
  for (std::size_t c = 0; c < comparisons.size(); ++c) {
    const auto& cmp = comparisons[c];
    auto ra = static_cast<Eigen::Index>(data.row(cmp.a));
    auto rb = static_cast<Eigen::Index>(data.row(cmp.b));
    if (cmp.choice == Choice::prefer_b) std::swap(ra, rb);
    p.diffs.row(static_cast<Eigen::Index>(c)) = fm.values.row(ra) - fm.values.row(rb);
    p.strict.push_back(cmp.choice != Choice::indifferent);
  }

  ComparisonFit out;
  Eigen::VectorXd w = p.prior;
  double f = p.objective(w);
  out.objective_trace.push_back(f);
  if (comparisons.empty()) {
    out.utility = prior;
    return out;
  }
  Eigen::VectorXd s = p.diffs * w;
  for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    double max_step = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      if (p.diffs.col(j).isZero(0.0) && w(j) == p.prior(j)) continue;
      const double t = detail::coordinate_minimizer(p, w, s, j);
      const double old = w(j);
      if (t == old) continue;
      w(j) = t;
      const double candidate = p.objective(w);
      if (candidate > f) {
        w(j) = old;
        continue;
      }
      s += p.diffs.col(j) * (t - old);
      f = candidate;
      max_step = std::max(max_step, std::abs(t - old));
    }
    out.objective_trace.push_back(f);
    if (max_step <= cfg.tolerance * (1.0 + w.lpNorm<Eigen::Infinity>())) break;
  }
  out.utility = utility_from_vector(w, fm.layout, prior.intercept);
  out.utility.epsilon_noise = prior.epsilon_noise;
  return out;
}

inline LinearUtility fit_from_comparisons(std::span<const Comparison> comparisons,
                                          const SessionData& data, const LinearUtility& prior,
                                          const ElicitationConfig& cfg = {}) {
  return fit_from_comparisons_traced(comparisons, data, prior, cfg).utility;
}

inline std::vector<Comparison> answered_comparisons(const Session& s) {
  std::vector<Comparison> out;
  for (const auto& ans : s.answers) {
    const auto& q = s.questions.at(ans.index);
    out.push_back({q.a, q.b, ans.choice});
  }
  return out;
}

// The outstanding question if one exists; otherwise the unasked pair with the
// smallest score gap among the current top-`pool_size` tuples (pool widened
// when all its pairs are used). `a` is the better-scored tuple of the pair.
inline ComparisonQuestion next_question(const Session& s) {
  require(s.status == SessionStatus::collecting, ErrorKind::state,
          "session '" + s.id + "' is " + std::string(to_string(s.status)));
  if (const auto* q = s.outstanding()) return *q;
  require(s.questions.size() < s.q_budget, ErrorKind::state, "question budget exhausted");

  const auto& fm = s.data->features;
  auto scored = score_tuples(s.estimate, fm);
  std::sort(scored.begin(), scored.end(), ranks_before);

  std::set<std::pair<std::string, std::string>> asked;
  for (const auto& q : s.questions) asked.insert(std::minmax(q.a, q.b));

  for (std::size_t pool = std::max<std::size_t>(2, s.config.pool_size);;
       pool = std::min(scored.size(), pool * 2)) {
    pool = std::min(pool, scored.size());
    const ScoredTuple* best_a = nullptr;
    const ScoredTuple* best_b = nullptr;
    double best_gap = 0.0;
    for (std::size_t i = 0; i < pool; ++i) {
      for (std::size_t j = i + 1; j < pool; ++j) {
        if (asked.count(std::minmax(scored[i].id, scored[j].id))) continue;
        const double gap = std::abs(scored[i].score - scored[j].score);
        if (best_a == nullptr || gap < best_gap) {
          best_a = &scored[i];
          best_b = &scored[j];
          best_gap = gap;
        }
      }
    }
    if (best_a != nullptr) return {s.questions.size(), best_a->id, best_b->id};
    require(pool < scored.size(), ErrorKind::state, "every tuple pair has already been asked");
  }
}

// Appends next_question to the asked list unless one is outstanding.
inline std::pair<Session, ComparisonQuestion> ask_question(Session s) {
  ComparisonQuestion q = next_question(s);
  if (q.index == s.questions.size()) s.questions.push_back(q);
  return {std::move(s), q};
}

// Strict preferences that `u` gets wrong (ties count as wrong).
inline std::size_t count_violations(std::span<const Comparison> comparisons, const SessionData& data,
                                    const LinearUtility& u) {
  std::size_t bad = 0;
  const auto& fm = data.features;
  for (const auto& c : comparisons) {
    if (c.choice == Choice::indifferent) continue;
    const double sa = evaluate_utility(u, fm.row(data.row(c.a)));
    const double sb = evaluate_utility(u, fm.row(data.row(c.b)));
    if (c.choice == Choice::prefer_a ? !(sa > sb) : !(sb > sa)) ++bad;
  }
  return bad;
}

// Fits at the configured lambda; while strict answers remain violated, lambda
// shrinks tenfold (not below min_lambda). Keeps the fit with the fewest
// violations, preferring the larger lambda on ties.
inline LinearUtility fit_consistent(std::span<const Comparison> comparisons, const SessionData& data,
                                    const LinearUtility& prior, const ElicitationConfig& cfg) {
  ElicitationConfig step = cfg;
  LinearUtility best = fit_from_comparisons(comparisons, data, prior, step);
  std::size_t best_bad = count_violations(comparisons, data, best);
  while (best_bad > 0 && step.lambda * 0.1 >= cfg.min_lambda) {
    step.lambda *= 0.1;
    LinearUtility u = fit_from_comparisons(comparisons, data, prior, step);
    const std::size_t bad = count_violations(comparisons, data, u);
    if (bad < best_bad) {
      best = std::move(u);
      best_bad = bad;
    }
  }
  return best;
}

inline Session record_answer(Session s, const ComparisonAnswer& answer) {
  require(answer.index < s.questions.size(), ErrorKind::validation,
          "question " + std::to_string(answer.index) + " was never asked");
  require(!s.answered(answer.index), ErrorKind::validation,
          "question " + std::to_string(answer.index) + " already answered");
  require(s.status == SessionStatus::collecting, ErrorKind::state,
          "session '" + s.id + "' is not collecting answers");
  s.answers.push_back(answer);
  s.estimate = fit_consistent(answered_comparisons(s), *s.data, s.prior, s.config);
  if (s.answers.size() >= s.q_budget) s.status = SessionStatus::exhausted;
  return s;
}

// Strict preferences the current estimate gets wrong.
inline std::size_t violated_constraints(const Session& s) {
  return count_violations(answered_comparisons(s), *s.data, s.estimate);
}

// Answers by a hidden utility over the session features; strict answers
// flip with probability p_flip. Exact ties are indifferent and never flip.
class SimulatedUser {
 public:
  SimulatedUser(LinearUtility truth, double p_flip, std::uint64_t seed)
      : truth_(std::move(truth)), p_flip_(p_flip), rng_(seed) {
    require(p_flip_ >= 0.0 && p_flip_ < 0.5, ErrorKind::validation, "p_flip must lie in [0, 0.5)");
  }

  const LinearUtility& truth() const noexcept { return truth_; }
  double p_flip() const noexcept { return p_flip_; }

  ComparisonAnswer answer(const ComparisonQuestion& q, const SessionData& data) {
    const auto& fm = data.features;
    const double sa = evaluate_utility(truth_, fm.row(data.row(q.a)));
    const double sb = evaluate_utility(truth_, fm.row(data.row(q.b)));
    const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p_flip_;
    if (sa == sb) return {q.index, Choice::indifferent};
    const bool prefer_a = (sa > sb) != flip;
    return {q.index, prefer_a ? Choice::prefer_a : Choice::prefer_b};
  }

 private:
  LinearUtility truth_;
  double p_flip_;
  std::mt19937_64 rng_;
};

inline ComparisonAnswer simulate_user(SimulatedUser& user, const ComparisonQuestion& q,
                                      const SessionData& data) {
  return user.answer(q, data);
}

// --- serialization -------------------------------------------------------

inline constexpr int kSessionFormatVersion = 1;

inline nlohmann::json utility_to_json(const LinearUtility& u) {
  return {{"numerical", u.numerical},
          {"textual", u.textual},
          {"intercept", u.intercept},
          {"epsilon_noise", u.epsilon_noise}};
}

inline LinearUtility utility_from_json(const nlohmann::json& j) {
  LinearUtility u;
  u.numerical = j.value("numerical", std::map<std::string, double>{});
  u.textual = j.value("textual", std::map<std::string, std::vector<double>>{});
  u.intercept = j.value("intercept", 0.0);
  u.epsilon_noise = j.value("epsilon_noise", 0.0);
  return u;
}

inline nlohmann::json session_to_json(const Session& s) {
  nlohmann::json questions = nlohmann::json::array();
  for (const auto& q : s.questions) questions.push_back({{"index", q.index}, {"a", q.a}, {"b", q.b}});
  nlohmann::json answers = nlohmann::json::array();
  for (const auto& a : s.answers) {
    answers.push_back({{"index", a.index}, {"choice", std::string(to_string(a.choice))}});
  }
  return {
      {"version", kSessionFormatVersion},
      {"id", s.id},
      {"dataset", s.dataset_name},
      {"dataset_fingerprint", s.dataset_fingerprint},
      {"ranking", {{"order", s.ranking.order}, {"weights", s.ranking.weights}}},
      {"questions", questions},
      {"answers", answers},
      {"q_budget", s.q_budget},
      {"prior", utility_to_json(s.prior)},
      {"estimate", utility_to_json(s.estimate)},
      {"status", std::string(to_string(s.status))},
      {"config",
       {{"lambda", s.config.lambda},
        {"margin", s.config.margin},
        {"indifferent_weight", s.config.indifferent_weight},
        {"pool_size", s.config.pool_size},
        {"max_sweeps", s.config.max_sweeps},
        {"tolerance", s.config.tolerance},
        {"min_lambda", s.config.min_lambda}}},
  };
}

// Restores a session snapshot as stored, without refitting.
inline Session session_from_json(const nlohmann::json& j, std::shared_ptr<const SessionData> data) {
  try {
    require(j.at("version").get<int>() == kSessionFormatVersion, ErrorKind::validation,
            "unsupported session format version");
    Session s;
    s.id = j.at("id").get<std::string>();
    s.dataset_name = j.value("dataset", "");
    s.dataset_fingerprint = j.value("dataset_fingerprint", "");
    s.ranking.order = j.at("ranking").at("order").get<std::vector<std::string>>();
    s.ranking.weights = j.at("ranking").at("weights").get<std::map<std::string, double>>();
    s.data = std::move(data);
    for (const auto& q : j.at("questions")) {
      s.questions.push_back({q.at("index").get<std::size_t>(), q.at("a").get<std::string>(),
                             q.at("b").get<std::string>()});
    }
    for (const auto& a : j.at("answers")) {
      s.answers.push_back({a.at("index").get<std::size_t>(),
                           parse_choice(a.at("choice").get<std::string>())});
    }
    s.q_budget = j.at("q_budget").get<std::size_t>();
    s.prior = utility_from_json(j.at("prior"));
    s.estimate = utility_from_json(j.at("estimate"));
    s.status = parse_status(j.at("status").get<std::string>());
    const auto& c = j.at("config");
    s.config.lambda = c.at("lambda").get<double>();
    s.config.margin = c.at("margin").get<double>();
    s.config.indifferent_weight = c.at("indifferent_weight").get<double>();
    s.config.pool_size = c.at("pool_size").get<std::size_t>();
    s.config.max_sweeps = c.at("max_sweeps").get<std::size_t>();
    s.config.tolerance = c.at("tolerance").get<double>();
    s.config.min_lambda = c.at("min_lambda").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("malformed session document: ") + e.what());
  }
}

// Rebuilds a session from its serialized questions and answers, refitting at
// every step, starting from the stored prior.
inline Session replay_session(const nlohmann::json& j, std::shared_ptr<const SessionData> data) {
  Session stored = session_from_json(j, data);
  Session s = start_session(stored.id, std::move(data), stored.ranking, stored.prior,
                            stored.q_budget, stored.config);
  s.dataset_name = stored.dataset_name;
  s.dataset_fingerprint = stored.dataset_fingerprint;
  for (const auto& ans : stored.answers) {
    while (s.questions.size() <= ans.index) {
      auto [next, q] = ask_question(std::move(s));
      s = std::move(next);
      require(q == stored.questions.at(q.index), ErrorKind::validation,
              "replayed question " + std::to_string(q.index) + " differs from the stored one");
    }
    s = record_answer(std::move(s), ans);
  }
  if (s.status == SessionStatus::collecting && stored.questions.size() > s.questions.size()) {
    auto [next, q] = ask_question(std::move(s));
    s = std::move(next);
  }
  return s;
}

}  // namespace prefquery
