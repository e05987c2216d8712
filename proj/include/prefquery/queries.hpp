#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/error.hpp"

namespace prefquery {

struct ScoredTuple {
  std::string id;
  double score = 0.0;

  bool operator==(const ScoredTuple&) const = default;
};

enum class QueryKind { indistinguishability, top_k, skyline, optimal_subsets };

inline std::string_view to_string(QueryKind kind) {
  switch (kind) {
    case QueryKind::indistinguishability: return "indistinguishability";
    case QueryKind::top_k: return "top_k";
    case QueryKind::skyline: return "skyline";
    case QueryKind::optimal_subsets: return "optimal_subsets";
  }
  return "unknown";
}

struct QueryDescriptor {
  QueryKind kind = QueryKind::top_k;
  std::map<std::string, double> parameters;
};

struct QueryResult {
  std::vector<ScoredTuple> selected;  // descending score, ties by ascending id
  QueryDescriptor query;

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(selected.size());
    for (const auto& s : selected) out.push_back(s.id);
    return out;
  }

  std::set<std::string> id_set() const {
    std::set<std::string> out;
    for (const auto& s : selected) out.insert(s.id);
    return out;
  }
};

// Descending score, ascending id on ties.
inline bool ranks_before(const ScoredTuple& a, const ScoredTuple& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

inline std::vector<ScoredTuple> make_scored(const std::vector<std::string>& ids,
                                            std::span<const double> scores) {
  require(ids.size() == scores.size(), ErrorKind::validation, "ids and scores differ in length");
  std::vector<ScoredTuple> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], scores[i]});
  return out;
}

inline std::vector<ScoredTuple> score_tuples(const LinearUtility& u, const FeatureMatrix& fm) {
  return make_scored(fm.ids, score_rows(u, fm));
}

namespace detail {

inline void check_scores(std::span<const ScoredTuple> scores) {
  require(!scores.empty(), ErrorKind::domain, "query over an empty score set");
  for (const auto& s : scores) {
    require(std::isfinite(s.score), ErrorKind::domain, "score for '" + s.id + "' is not finite");
  }
}

}  // namespace detail

// Every tuple with score >= s_max / (1 + epsilon), inclusive. For s_max <= 0
// the ratio is meaningless, so the threshold becomes s_max - epsilon * |s_max|.
inline QueryResult indistinguishability_query(std::span<const ScoredTuple> scores, double epsilon) {
  detail::check_scores(scores);
  require(std::isfinite(epsilon) && epsilon >= 0.0, ErrorKind::domain,
          "epsilon must be a finite nonnegative number");
  double s_max = scores.front().score;
  for (const auto& s : scores) s_max = std::max(s_max, s.score);

  QueryResult result{{}, {QueryKind::indistinguishability, {{"epsilon", epsilon}}}};
  for (const auto& s : scores) {
    const bool keep = s_max > 0.0 ? s.score * (1.0 + epsilon) >= s_max
                                  : s.score >= s_max - epsilon * std::abs(s_max);
    if (keep) result.selected.push_back(s);
  }
  std::sort(result.selected.begin(), result.selected.end(), ranks_before);
  return result;
}

inline QueryResult top_k(std::span<const ScoredTuple> scores, std::size_t k) {
  detail::check_scores(scores);
  require(k >= 1 && k <= scores.size(), ErrorKind::domain,
          "k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
  std::vector<ScoredTuple> all(scores.begin(), scores.end());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    ranks_before);
  all.resize(k);
  return {std::move(all), {QueryKind::top_k, {{"k", static_cast<double>(k)}}}};
}

// The size-k subset maximizing the summed utility. The objective is additive,
// so this is top-k under u_real.
inline QueryResult optimal_subsets(const LinearUtility& u_real, const FeatureMatrix& features,
                                   std::size_t k) {
  auto scored = score_tuples(u_real, features);
  QueryResult r = top_k(scored, k);
  r.query.kind = QueryKind::optimal_subsets;
  return r;
}

struct SkylineAttribute {
  std::string name;
  Direction direction = Direction::higher_is_better;
};

// Pareto-nondominated tuples over the selected numerical attributes,
// block-nested-loop. Result scores are zero; order is by ascending id.
inline QueryResult skyline(const Dataset& dataset, const std::vector<SkylineAttribute>& attributes) {
  require(!attributes.empty(), ErrorKind::domain, "skyline needs at least one numerical attribute");
  require(dataset.size() > 0, ErrorKind::domain, "skyline over an empty dataset");
  std::vector<std::vector<double>> cols;
  for (const auto& a : attributes) {
    require(dataset.contains(a.name) &&
                dataset.attribute(a.name).kind == AttributeKind::numerical,
            ErrorKind::domain, "skyline attribute '" + a.name + "' is not numerical");
    auto src = dataset.numerical(a.name);
    std::vector<double> col(src.begin(), src.end());
    if (a.direction == Direction::lower_is_better) {
      for (double& v : col) v = -v;
    }
    cols.push_back(std::move(col));
  }
  const std::size_t dims = cols.size();
  // Returns -1 if p dominates q, +1 if q dominates p, 0 otherwise.
  auto compare = [&](std::size_t p, std::size_t q) {
    bool p_better = false, q_better = false;
    for (std::size_t d = 0; d < dims; ++d) {
      if (cols[d][p] > cols[d][q]) p_better = true;
      if (cols[d][p] < cols[d][q]) q_better = true;
      if (p_better && q_better) return 0;
    }
    if (p_better) return -1;
    if (q_better) return 1;
    return 0;
  };

  std::vector<std::size_t> window;
  for (std::size_t t = 0; t < dataset.size(); ++t) {
    bool dominated = false;
    for (auto it = window.begin(); it != window.end();) {
      int c = compare(*it, t);
      if (c == -1) {
        dominated = true;
        break;
      }
      if (c == 1) {
        it = window.erase(it);
      } else {
        ++it;
      }
    }
    if (!dominated) window.push_back(t);
  }

  QueryResult result{{}, {QueryKind::skyline, {{"dimensions", static_cast<double>(dims)}}}};
  for (std::size_t t : window) result.selected.push_back({dataset.ids()[t], 0.0});
  std::sort(result.selected.begin(), result.selected.end(), ranks_before);
  return result;
}

// Skyline over every numerical attribute with its schema direction.
inline QueryResult skyline(const Dataset& dataset) {
  std::vector<SkylineAttribute> attrs;
  for (const auto& a : dataset.schema()) {
    if (a.kind == AttributeKind::numerical) attrs.push_back({a.name, a.direction});
  }
  return skyline(dataset, attrs);
}

// |retrieved ∩ relevant| / |retrieved|
inline double precision(const std::set<std::string>& retrieved,
                        const std::set<std::string>& relevant) {
  require(!retrieved.empty(), ErrorKind::domain, "precision of an empty retrieval is undefined");
  std::size_t hits = 0;
  for (const auto& id : retrieved) hits += relevant.count(id);
  return static_cast<double>(hits) / static_cast<double>(retrieved.size());
}

}  // namespace prefquery
