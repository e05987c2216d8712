#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/error.hpp"
#include "prefquery/harness/csv.hpp"

namespace prefquery {

// Phrases grouped by planted desirability; group g carries signal
// group_values[g].
struct TextVocabulary {
  std::vector<std::vector<std::string>> groups;
  std::vector<double> group_values;
};

inline TextVocabulary default_vocabulary() {
  return {
      {
          {"old rural farmhouse", "rundown shack far from town", "drafty cottage needing repairs",
           "dated cabin on a gravel road", "worn bungalow by the highway",
           "cramped unit next to the landfill"},
          {"plain suburban house", "ordinary townhouse with a small yard",
           "basic duplex near the mall", "standard ranch home on a quiet street",
           "simple condo in an older complex", "average split level in the suburbs"},
          {"renovated family home near good schools", "bright condo with updated kitchen",
           "spacious craftsman with a garden", "well kept brick colonial",
           "sunny townhouse close to the park", "refreshed loft near transit"},
          {"modern luxury penthouse downtown", "designer apartment with skyline views",
           "new smart home in the city center", "stylish waterfront villa with pool",
           "high end loft steps from the metro", "elegant modern residence with concierge"},
      },
      {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0},
  };
}

struct SyntheticSpec {
  std::size_t N = 1000;
  std::size_t m = 2;
  std::size_t n = 1;
  std::vector<double> numeric_weights;  // size m; planted coefficients on raw [0,1] columns
  std::vector<double> text_weights;     // size n; coefficients on each column's group value
  TextVocabulary vocabulary = default_vocabulary();
  double sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(N >= 1, ErrorKind::validation, "synthetic N must be >= 1");
    require(sigma >= 0.0, ErrorKind::validation, "synthetic sigma must be >= 0");
    require(numeric_weights.size() == m, ErrorKind::validation, "need one weight per numerical column");
    require(text_weights.size() == n, ErrorKind::validation, "need one weight per textual column");
    if (n > 0) {
      require(!vocabulary.groups.empty() &&
                  vocabulary.groups.size() == vocabulary.group_values.size(),
              ErrorKind::validation, "vocabulary needs one value per nonempty group");
      for (const auto& g : vocabulary.groups) {
        require(!g.empty(), ErrorKind::validation, "vocabulary groups must be nonempty");
      }
    }
  }

  // Share of total absolute planted weight on textual columns.
  double text_weight_share() const {
    double num = 0.0, text = 0.0;
    for (double w : numeric_weights) num += std::abs(w);
    for (double w : text_weights) text += std::abs(w);
    return num + text > 0.0 ? text / (num + text) : 0.0;
  }
};

inline std::string numeric_column_name(std::size_t j) { return "x" + std::to_string(j + 1); }
inline std::string text_column_name(std::size_t k) { return "text" + std::to_string(k + 1); }

struct SyntheticData {
  Dataset dataset;
  // Numerical coefficients over the raw columns; each textual attribute has a
  // one-element block applied to the group value of its phrase.
  LinearUtility truth;
  std::map<std::string, double> phrase_signal;
  std::vector<double> planted_scores;
  std::vector<double> labels;
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  SyntheticData out;
  for (std::size_t g = 0; g < spec.vocabulary.groups.size(); ++g) {
    for (const auto& phrase : spec.vocabulary.groups[g]) {
      out.phrase_signal[phrase] = spec.vocabulary.group_values[g];
    }
  }

  std::vector<AttributeSchema> schema;
  std::vector<Column> columns;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < spec.N; ++i) ids.push_back(row_id("t", i, spec.N));
  out.planted_scores.assign(spec.N, 0.0);

  for (std::size_t j = 0; j < spec.m; ++j) {
    std::vector<double> col(spec.N);
    for (double& v : col) v = unit(rng);
    for (std::size_t i = 0; i < spec.N; ++i) out.planted_scores[i] += spec.numeric_weights[j] * col[i];
    schema.push_back({numeric_column_name(j), AttributeKind::numerical, Direction::higher_is_better});
    out.truth.numerical[schema.back().name] = spec.numeric_weights[j];
    columns.emplace_back(std::move(col));
  }
  const std::size_t n_groups = spec.vocabulary.groups.size();
  for (std::size_t k = 0; k < spec.n; ++k) {
    std::vector<std::string> col(spec.N);
    for (std::size_t i = 0; i < spec.N; ++i) {
      const auto g = std::min(n_groups - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(n_groups)));
      const auto& group = spec.vocabulary.groups[g];
      const auto p = std::min(group.size() - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(group.size())));
      col[i] = group[p];
      out.planted_scores[i] += spec.text_weights[k] * spec.vocabulary.group_values[g];
    }
    schema.push_back({text_column_name(k), AttributeKind::textual, Direction::higher_is_better});
    out.truth.textual[schema.back().name] = {spec.text_weights[k]};
    columns.emplace_back(std::move(col));
  }

  out.labels = out.planted_scores;
  if (spec.sigma > 0.0) {
    for (double& u : out.labels) u += spec.sigma * noise(rng);
  }
  out.dataset = Dataset::from_columns(std::move(schema), std::move(ids), std::move(columns));
  return out;
}

// Attributes ordered by planted absolute weight, largest first (ties by name):
// the ranking a user who knows their own preferences would give.
inline RankingInput planted_ranking(const SyntheticData& data) {
  std::vector<std::pair<double, std::string>> weighted;
  for (const auto& [name, w] : data.truth.numerical) weighted.emplace_back(std::abs(w), name);
  for (const auto& [name, w] : data.truth.textual) weighted.emplace_back(std::abs(w.at(0)), name);
  std::sort(weighted.begin(), weighted.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> order;
  for (auto& [_, name] : weighted) order.push_back(std::move(name));
  return make_ranking(data.dataset.schema(), std::move(order));
}

}  // namespace prefquery
