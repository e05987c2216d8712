#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "prefquery/queries.hpp"
#include "support.hpp"

using namespace prefquery;

namespace {

std::vector<ScoredTuple> cars_utilities() {
  return {{"c1", 159}, {"c2", 116}, {"c3", 164}, {"c4", 134}, {"c5", 158}};
}

std::vector<ScoredTuple> random_scores(std::size_t n, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<ScoredTuple> out;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "t%03zu", i);
    out.push_back({buf, d(rng)});
  }
  return out;
}

Dataset numeric_dataset(const std::vector<std::vector<double>>& rows, std::vector<Direction> dirs = {}) {
  const std::size_t dims = rows.empty() ? 0 : rows[0].size();
  std::vector<AttributeSchema> schema;
  std::vector<Column> cols;
  std::vector<std::string> ids;
  for (std::size_t d = 0; d < dims; ++d) {
    schema.push_back({"a" + std::to_string(d), AttributeKind::numerical,
                      dirs.empty() ? Direction::higher_is_better : dirs[d]});
    std::vector<double> c;
    for (const auto& r : rows) c.push_back(r[d]);
    cols.emplace_back(c);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "t%03zu", i);
    ids.push_back(buf);
  }
  return Dataset::from_columns(schema, ids, cols);
}

}  // namespace

TEST(Indistinguishability, CarsExample) {
  auto r = indistinguishability_query(cars_utilities(), 0.05);
  EXPECT_EQ(r.id_set(), (std::set<std::string>{"c1", "c3", "c5"}));
  EXPECT_EQ(r.ids(), (std::vector<std::string>{"c3", "c1", "c5"}));
  EXPECT_EQ(r.query.kind, QueryKind::indistinguishability);
}

TEST(Indistinguishability, ZeroEpsilonIsArgmaxSet) {
  std::vector<ScoredTuple> s{{"a", 3}, {"b", 5}, {"c", 5}, {"d", 4.999999}};
  EXPECT_EQ(indistinguishability_query(s, 0.0).ids(), (std::vector<std::string>{"b", "c"}));
}

TEST(Indistinguishability, InclusiveThreshold) {
  std::vector<ScoredTuple> s{{"a", 2.0}, {"b", 1.0}};
  EXPECT_EQ(indistinguishability_query(s, 1.0).ids(), (std::vector<std::string>{"a", "b"}));
}

TEST(Indistinguishability, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = random_scores(100, seed, 0.1, 10.0);
    auto got = indistinguishability_query(s, 0.1).id_set();
    double mx = 0.0;
    for (const auto& t : s) mx = std::max(mx, t.score);
    std::set<std::string> want;
    for (const auto& t : s)
      if (t.score * 1.1 >= mx) want.insert(t.id);
    EXPECT_EQ(got, want);
  }
}

TEST(Indistinguishability, NonPositiveFallback) {
  std::vector<ScoredTuple> s{{"a", -10}, {"b", -10.5}, {"c", -12}};
  EXPECT_EQ(indistinguishability_query(s, 0.1).id_set(), (std::set<std::string>{"a", "b"}));
  std::vector<ScoredTuple> z{{"a", 0.0}, {"b", -1e-9}};
  EXPECT_EQ(indistinguishability_query(z, 0.5).id_set(), (std::set<std::string>{"a"}));
}

TEST(Indistinguishability, Errors) {
  EXPECT_KIND(indistinguishability_query(std::vector<ScoredTuple>{}, 0.1), domain);
  EXPECT_KIND(indistinguishability_query(cars_utilities(), -0.1), domain);
  std::vector<ScoredTuple> bad{{"a", NAN}};
  EXPECT_KIND(indistinguishability_query(bad, 0.1), domain);
}

TEST(Indistinguishability, MonotoneInEpsilonAndContainsArgmax) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = random_scores(40, seed, -5.0, 10.0);
    auto argmax = indistinguishability_query(s, 0.0).id_set();
    std::set<std::string> prev;
    for (double eps : {0.0, 0.01, 0.05, 0.2, 1.0, 5.0}) {
      auto cur = indistinguishability_query(s, eps).id_set();
      EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      EXPECT_TRUE(std::includes(cur.begin(), cur.end(), argmax.begin(), argmax.end()));
      prev = cur;
    }
  }
}

TEST(Indistinguishability, PositiveScalingInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    // Dyadic scores and a power-of-two factor keep the scaling exact.
    auto s = random_scores(30, seed, 1.0, 100.0);
    for (auto& t : s) t.score = std::round(t.score * 64) / 64;
    auto scaled = s;
    for (auto& t : scaled) t.score *= 8.0;
    EXPECT_EQ(indistinguishability_query(s, 0.07).id_set(), indistinguishability_query(scaled, 0.07).id_set());
    EXPECT_EQ(top_k(s, 5).ids(), top_k(scaled, 5).ids());
  }
}

TEST(TopK, CarsTopChoice) {
  EXPECT_EQ(top_k(cars_utilities(), 1).ids(), std::vector<std::string>{"c3"});
}

TEST(TopK, FullSetAndRange) {
  EXPECT_EQ(top_k(cars_utilities(), 5).ids(), (std::vector<std::string>{"c3", "c1", "c5", "c4", "c2"}));
  EXPECT_KIND(top_k(cars_utilities(), 0), domain);
  EXPECT_KIND(top_k(cars_utilities(), 6), domain);
}

TEST(TopK, MatchesSortOracle) {
  auto s = random_scores(50, 77, -1.0, 1.0);
  auto sorted = s;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  sorted.resize(7);
  EXPECT_EQ(top_k(s, 7).selected, sorted);
}

TEST(TopK, NestedInK) {
  auto s = random_scores(25, 3, 0.0, 1.0);
  for (std::size_t k = 1; k < s.size(); ++k) {
    auto a = top_k(s, k).id_set();
    auto b = top_k(s, k + 1).id_set();
    EXPECT_TRUE(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  }
}

TEST(OptimalSubsets, TiesTakeFirstIds) {
  FeatureMatrix fm{FeatureLayout({"x"}, {}, 0), {"d", "b", "a", "c"}, Eigen::MatrixXd::Ones(4, 1)};
  LinearUtility u{{{"x", 2.0}}, {}, 0.0, 0.0};
  EXPECT_EQ(optimal_subsets(u, fm, 2).ids(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(optimal_subsets(u, fm, 1).query.kind, QueryKind::optimal_subsets);
}

TEST(OptimalSubsets, KOneIsArgmax) {
  Eigen::MatrixXd x(3, 1);
  x << 0.2, 0.9, 0.5;
  FeatureMatrix fm{FeatureLayout({"x"}, {}, 0), {"a", "b", "c"}, x};
  EXPECT_EQ(optimal_subsets(LinearUtility{{{"x", 1.0}}, {}, 0.0, 0.0}, fm, 1).ids(), std::vector<std::string>{"b"});
}

TEST(Skyline, SingleTuple) {
  auto d = numeric_dataset({{1.0, 2.0}});
  EXPECT_EQ(skyline(d).ids(), std::vector<std::string>{"t000"});
}

TEST(Skyline, CarsRawColumns) {
  std::vector<AttributeSchema> schema{{"MPG", AttributeKind::numerical, Direction::higher_is_better},
                                      {"SR", AttributeKind::numerical, Direction::higher_is_better}};
  auto d = Dataset::from_columns(schema, {"c1", "c2", "c3", "c4", "c5"},
                                 {std::vector<double>{59, 36, 46, 34, 35}, std::vector<double>{5, 4, 5, 5, 5}});
  auto r = skyline(d);
  EXPECT_EQ(r.ids(), std::vector<std::string>{"c1"});
  EXPECT_EQ(r.selected[0].score, 0.0);
}

TEST(Skyline, DirectionAndDuplicates) {
  auto d = numeric_dataset({{1, 5}, {2, 3}, {2, 3}, {0, 9}}, {Direction::higher_is_better, Direction::lower_is_better});
  // Maximize a0, minimize a1: (2,3) twice is the only nondominated point.
  EXPECT_EQ(skyline(d).ids(), (std::vector<std::string>{"t001", "t002"}));
}

TEST(Skyline, Errors) {
  auto d = numeric_dataset({{1, 2}});
  EXPECT_KIND(skyline(d, {}), domain);
  EXPECT_KIND(skyline(d, {{"nope", Direction::higher_is_better}}), domain);
  std::vector<AttributeSchema> schema{{"s", AttributeKind::textual, Direction::higher_is_better}};
  auto t = Dataset::from_columns(schema, {"x"}, {std::vector<std::string>{"a"}});
  EXPECT_KIND(skyline(t), domain);
}

TEST(Skyline, ContainsTopOfEveryPositiveUtility) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> rows(80, std::vector<double>(3));
  for (auto& r : rows)
    for (double& v : r) v = u(rng);
  auto d = numeric_dataset(rows);
  auto sky = skyline(d).id_set();
  for (int trial = 0; trial < 200; ++trial) {
    double w[3] = {u(rng) + 1e-3, u(rng) + 1e-3, u(rng) + 1e-3};
    std::vector<ScoredTuple> s;
    for (std::size_t i = 0; i < rows.size(); ++i)
      s.push_back({d.ids()[i], w[0] * rows[i][0] + w[1] * rows[i][1] + w[2] * rows[i][2]});
    EXPECT_TRUE(sky.count(top_k(s, 1).ids()[0]));
  }
}

TEST(Precision, Examples) {
  EXPECT_EQ(precision({"c3"}, {"c3"}), 1.0);
  EXPECT_DOUBLE_EQ(precision({"c1", "c3", "c5"}, {"c3"}), 1.0 / 3.0);
  EXPECT_EQ(precision({"a", "b"}, {"c"}), 0.0);
  EXPECT_KIND(precision({}, {"c"}), domain);
}
