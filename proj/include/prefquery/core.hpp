#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "prefquery/digest.hpp"
#include "prefquery/error.hpp"

namespace prefquery {

enum class AttributeKind { numerical, textual };
enum class Direction { higher_is_better, lower_is_better };

inline std::string_view to_string(AttributeKind kind) {
  return kind == AttributeKind::numerical ? "numerical" : "textual";
}

inline std::string_view to_string(Direction direction) {
  return direction == Direction::higher_is_better ? "higher_is_better" : "lower_is_better";
}

inline AttributeKind parse_kind(std::string_view text) {
  if (text == "numerical") return AttributeKind::numerical;
  if (text == "textual") return AttributeKind::textual;
  fail(ErrorKind::validation, "unknown attribute kind '" + std::string(text) + "'");
}

inline Direction parse_direction(std::string_view text) {
  if (text == "higher_is_better" || text == "higher") return Direction::higher_is_better;
  if (text == "lower_is_better" || text == "lower") return Direction::lower_is_better;
  fail(ErrorKind::validation, "unknown direction '" + std::string(text) + "'");
}

struct AttributeSchema {
  std::string name;
  AttributeKind kind = AttributeKind::numerical;
  Direction direction = Direction::higher_is_better;

  bool operator==(const AttributeSchema&) const = default;
};

using Cell = std::variant<double, std::string>;

struct Tuple {
  std::string id;
  std::map<std::string, Cell> values;
};

using Column = std::variant<std::vector<double>, std::vector<std::string>>;

// Columnar table of tuples. Immutable once constructed; every constructor
// validates the schema/tuple invariants.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<AttributeSchema> schema, const std::vector<Tuple>& tuples)
      : schema_(std::move(schema)) {
    for (const auto& attr : schema_) {
      if (attr.kind == AttributeKind::numerical) {
        columns_.emplace_back(std::vector<double>{});
      } else {
        columns_.emplace_back(std::vector<std::string>{});
      }
    }
    ids_.reserve(tuples.size());
    for (const auto& t : tuples) {
      require(t.values.size() == schema_.size(), ErrorKind::validation,
              "tuple '" + t.id + "' has " + std::to_string(t.values.size()) +
                  " values, schema has " + std::to_string(schema_.size()));
      ids_.push_back(t.id);
      for (std::size_t c = 0; c < schema_.size(); ++c) {
        auto it = t.values.find(schema_[c].name);
        require(it != t.values.end(), ErrorKind::validation,
                "tuple '" + t.id + "' lacks attribute '" + schema_[c].name + "'");
        if (schema_[c].kind == AttributeKind::numerical) {
          const double* v = std::get_if<double>(&it->second);
          require(v != nullptr, ErrorKind::validation,
                  "tuple '" + t.id + "': attribute '" + schema_[c].name + "' must be numerical");
          std::get<std::vector<double>>(columns_[c]).push_back(*v);
        } else {
          const std::string* v = std::get_if<std::string>(&it->second);
          require(v != nullptr, ErrorKind::validation,
                  "tuple '" + t.id + "': attribute '" + schema_[c].name + "' must be textual");
          std::get<std::vector<std::string>>(columns_[c]).push_back(*v);
        }
      }
    }
    validate();
  }

  static Dataset from_columns(std::vector<AttributeSchema> schema, std::vector<std::string> ids,
                              std::vector<Column> columns) {
    Dataset d;
    d.schema_ = std::move(schema);
    d.ids_ = std::move(ids);
    d.columns_ = std::move(columns);
    d.validate();
    return d;
  }

  const std::vector<AttributeSchema>& schema() const noexcept { return schema_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t attribute_count() const noexcept { return schema_.size(); }

  std::size_t m() const noexcept { return count_kind(AttributeKind::numerical); }
  std::size_t n() const noexcept { return count_kind(AttributeKind::textual); }

  bool contains(std::string_view name) const noexcept { return find(name) != schema_.size(); }

  std::size_t index_of(std::string_view name) const {
    std::size_t idx = find(name);
    require(idx != schema_.size(), ErrorKind::validation,
            "unknown attribute '" + std::string(name) + "'");
    return idx;
  }

  const AttributeSchema& attribute(std::string_view name) const { return schema_[index_of(name)]; }

  const Column& column(std::size_t idx) const { return columns_.at(idx); }

  std::span<const double> numerical(std::string_view name) const {
    const auto* col = std::get_if<std::vector<double>>(&columns_[index_of(name)]);
    require(col != nullptr, ErrorKind::validation,
            "attribute '" + std::string(name) + "' is not numerical");
    return *col;
  }

  const std::vector<std::string>& textual(std::string_view name) const {
    const auto* col = std::get_if<std::vector<std::string>>(&columns_[index_of(name)]);
    require(col != nullptr, ErrorKind::validation,
            "attribute '" + std::string(name) + "' is not textual");
    return *col;
  }

  std::vector<std::string> names_of(AttributeKind kind) const {
    std::vector<std::string> out;
    for (const auto& a : schema_) {
      if (a.kind == kind) out.push_back(a.name);
    }
    return out;
  }

  Tuple tuple(std::size_t row) const {
    Tuple t{ids_.at(row), {}};
    for (std::size_t c = 0; c < schema_.size(); ++c) {
      std::visit([&](const auto& col) { t.values.emplace(schema_[c].name, Cell(col[row])); },
                 columns_[c]);
    }
    return t;
  }

  // Copy with one numerical column replaced.
  Dataset with_numerical(std::string_view name, std::vector<double> values) const {
    std::size_t idx = index_of(name);
    require(schema_[idx].kind == AttributeKind::numerical, ErrorKind::validation,
            "attribute '" + std::string(name) + "' is not numerical");
    Dataset copy = *this;
    copy.columns_[idx] = std::move(values);
    copy.validate();
    return copy;
  }

  // Copy restricted to the given rows, in the given order.
  Dataset select_rows(std::span<const std::size_t> rows) const {
    Dataset d;
    d.schema_ = schema_;
    for (std::size_t r : rows) d.ids_.push_back(ids_.at(r));
    for (const auto& col : columns_) {
      std::visit(
          [&](const auto& values) {
            std::decay_t<decltype(values)> picked;
            picked.reserve(rows.size());
            for (std::size_t r : rows) picked.push_back(values.at(r));
            d.columns_.emplace_back(std::move(picked));
          },
          col);
    }
    d.validate();
    return d;
  }

  // SHA-256 over schema, ids and values.
  std::string fingerprint() const {
    Sha256 h;
    for (const auto& a : schema_) {
      h.update(a.name).update(to_string(a.kind)).update(to_string(a.direction)).update("\x1e");
    }
    for (const auto& id : ids_) h.update(id).update("\x1f");
    for (const auto& col : columns_) {
      std::visit(
          [&](const auto& values) {
            for (const auto& v : values) {
              if constexpr (std::is_same_v<std::decay_t<decltype(v)>, double>) {
                h.update(v);
              } else {
                h.update(std::string_view(v)).update("\x1f");
              }
            }
          },
          col);
      h.update("\x1e");
    }
    return h.hex();
  }

 private:
  std::size_t find(std::string_view name) const noexcept {
    for (std::size_t i = 0; i < schema_.size(); ++i) {
      if (schema_[i].name == name) return i;
    }
    return schema_.size();
  }

  std::size_t count_kind(AttributeKind kind) const noexcept {
    return static_cast<std::size_t>(std::count_if(
        schema_.begin(), schema_.end(), [&](const auto& a) { return a.kind == kind; }));
  }

  void validate() const {
    std::set<std::string_view> names;
    for (const auto& a : schema_) {
      require(!a.name.empty(), ErrorKind::validation, "attribute names must be nonempty");
      require(names.insert(a.name).second, ErrorKind::validation,
              "duplicate attribute name '" + a.name + "'");
    }
    require(columns_.size() == schema_.size(), ErrorKind::validation,
            "column count does not match schema");
    std::set<std::string_view> ids;
    for (const auto& id : ids_) {
      require(ids.insert(id).second, ErrorKind::validation, "duplicate tuple id '" + id + "'");
    }
    for (std::size_t c = 0; c < schema_.size(); ++c) {
      bool numeric = std::holds_alternative<std::vector<double>>(columns_[c]);
      require(numeric == (schema_[c].kind == AttributeKind::numerical), ErrorKind::validation,
              "column '" + schema_[c].name + "' storage does not match its kind");
      std::size_t len = std::visit([](const auto& v) { return v.size(); }, columns_[c]);
      require(len == ids_.size(), ErrorKind::validation,
              "column '" + schema_[c].name + "' length does not match row count");
    }
  }

  std::vector<AttributeSchema> schema_;
  std::vector<std::string> ids_;
  std::vector<Column> columns_;
};

// Maps a 1-based rank among d attributes to a weight in (0, 1].
using RankWeightFn = std::function<double(std::size_t rank, std::size_t d)>;

inline double linear_rank_weight(std::size_t rank, std::size_t d) {
  return static_cast<double>(d - rank + 1) / static_cast<double>(d);
}

struct RankingInput {
  std::vector<std::string> order;  // best first
  std::map<std::string, double> weights;

  double weight(std::string_view name) const {
    auto it = weights.find(std::string(name));
    require(it != weights.end(), ErrorKind::validation,
            "no rank weight for attribute '" + std::string(name) + "'");
    return it->second;
  }
};

// Validates `order` against the schema and derives weights.
inline RankingInput make_ranking(const std::vector<AttributeSchema>& schema,
                                 std::vector<std::string> order,
                                 const RankWeightFn& weight_fn = linear_rank_weight) {
  require(order.size() == schema.size(), ErrorKind::validation,
          "ranking has " + std::to_string(order.size()) + " attributes, schema has " +
              std::to_string(schema.size()));
  std::set<std::string> seen;
  for (const auto& name : order) {
    require(seen.insert(name).second, ErrorKind::validation,
            "attribute '" + name + "' ranked twice");
    bool known = std::any_of(schema.begin(), schema.end(),
                             [&](const auto& a) { return a.name == name; });
    require(known, ErrorKind::validation, "ranked attribute '" + name + "' not in schema");
  }
  RankingInput ranking{std::move(order), {}};
  const std::size_t d = ranking.order.size();
  double previous = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    double w = weight_fn(i + 1, d);
    require(std::isfinite(w) && w >= 0.0 && w <= previous, ErrorKind::validation,
            "rank weights must lie in [0,1] and be nonincreasing");
    ranking.weights[ranking.order[i]] = w;
    previous = w;
  }
  if (d > 0) {
    require(ranking.weights[ranking.order.front()] == 1.0, ErrorKind::validation,
            "top-ranked attribute must have weight 1");
  }
  return ranking;
}

// Min-max normalization onto [0,1]. Lower-is-better columns are inverted.
// Constant columns map to all zeros.
inline std::vector<double> minmax_normalize(std::span<const double> column, Direction direction) {
  require(!column.empty(), ErrorKind::validation, "cannot normalize an empty column");
  for (double v : column) {
    require(std::isfinite(v), ErrorKind::validation, "column contains a non-finite value");
  }
  auto [lo_it, hi_it] = std::minmax_element(column.begin(), column.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<double> out(column.size(), 0.0);
  if (hi == lo) return out;
  const double range = hi - lo;
  for (std::size_t i = 0; i < column.size(); ++i) {
    double v = (column[i] - lo) / range;
    if (direction == Direction::lower_is_better) v = 1.0 - v;
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

inline bool is_constant(std::span<const double> column) {
  return std::adjacent_find(column.begin(), column.end(), std::not_equal_to<>()) == column.end();
}

struct ScaledDataset {
  Dataset dataset;
  std::map<std::string, double> weights;
  std::vector<std::string> warnings;
};

// Normalizes each numerical column and multiplies it by its rank weight.
// Textual columns pass through unchanged.
inline ScaledDataset rank_scale(const Dataset& dataset, const RankingInput& ranking) {
  RankingInput checked = make_ranking(dataset.schema(), ranking.order,
                                      [&](std::size_t rank, std::size_t) {
                                        return ranking.weight(ranking.order[rank - 1]);
                                      });
  ScaledDataset out{dataset, checked.weights, {}};
  for (const auto& attr : dataset.schema()) {
    if (attr.kind != AttributeKind::numerical) continue;
    auto column = dataset.numerical(attr.name);
    if (is_constant(column)) {
      out.warnings.push_back("attribute '" + attr.name + "' is constant; scaled to zero");
    }
    std::vector<double> scaled = minmax_normalize(column, attr.direction);
    const double w = checked.weights.at(attr.name);
    for (double& v : scaled) v *= w;
    out.dataset = out.dataset.with_numerical(attr.name, std::move(scaled));
  }
  return out;
}

// Linear utility: numerical coefficients, one coefficient per embedding
// dimension for each textual attribute, an intercept, and the model noise
// scale (kept separate from any query-level epsilon).
struct LinearUtility {
  std::map<std::string, double> numerical;
  std::map<std::string, std::vector<double>> textual;
  double intercept = 0.0;
  double epsilon_noise = 0.0;

  bool operator==(const LinearUtility&) const = default;

  bool empty() const noexcept { return numerical.empty() && textual.empty(); }
};

// Coefficient keys must name schema attributes of the matching kind.
inline void validate_utility(const LinearUtility& u, const std::vector<AttributeSchema>& schema) {
  auto kind_of = [&](const std::string& name) -> const AttributeSchema* {
    for (const auto& a : schema) {
      if (a.name == name) return &a;
    }
    return nullptr;
  };
  for (const auto& [name, _] : u.numerical) {
    const auto* a = kind_of(name);
    require(a && a->kind == AttributeKind::numerical, ErrorKind::validation,
            "numerical coefficient for unknown or textual attribute '" + name + "'");
  }
  for (const auto& [name, _] : u.textual) {
    const auto* a = kind_of(name);
    require(a && a->kind == AttributeKind::textual, ErrorKind::validation,
            "textual coefficient for unknown or numerical attribute '" + name + "'");
  }
  require(u.epsilon_noise >= 0.0, ErrorKind::validation, "epsilon_noise must be nonnegative");
}

struct FeatureSegment {
  std::string name;
  AttributeKind kind = AttributeKind::numerical;
  std::size_t offset = 0;
  std::size_t width = 1;

  bool operator==(const FeatureSegment&) const = default;
};

// Describes how a dense feature row splits into attribute segments:
// scaled numerical values first, then one embedding block per textual attribute.
class FeatureLayout {
 public:
  FeatureLayout() = default;

  FeatureLayout(const std::vector<std::string>& numerical, const std::vector<std::string>& textual,
                std::size_t embed_dim) {
    for (const auto& name : numerical) add(name, AttributeKind::numerical, 1);
    for (const auto& name : textual) add(name, AttributeKind::textual, embed_dim);
  }

  void add(std::string name, AttributeKind kind, std::size_t width) {
    require(find(name) == nullptr, ErrorKind::validation,
            "duplicate feature segment '" + name + "'");
    segments_.push_back({std::move(name), kind, width_, width});
    width_ += width;
  }

  const std::vector<FeatureSegment>& segments() const noexcept { return segments_; }
  std::size_t width() const noexcept { return width_; }

  const FeatureSegment* find(std::string_view name) const noexcept {
    for (const auto& s : segments_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  std::vector<std::string> names_of(AttributeKind kind) const {
    std::vector<std::string> out;
    for (const auto& s : segments_) {
      if (s.kind == kind) out.push_back(s.name);
    }
    return out;
  }

  bool operator==(const FeatureLayout&) const = default;

 private:
  std::vector<FeatureSegment> segments_;
  std::size_t width_ = 0;
};

struct FeatureVector {
  FeatureLayout layout;
  std::vector<double> values;
};

// N rows of features sharing one layout.
struct FeatureMatrix {
  FeatureLayout layout;
  std::vector<std::string> ids;
  Eigen::MatrixXd values;

  std::size_t rows() const noexcept { return ids.size(); }

  FeatureVector row(std::size_t i) const {
    FeatureVector fv{layout, std::vector<double>(layout.width())};
    for (std::size_t j = 0; j < layout.width(); ++j) {
      fv.values[j] = values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    return fv;
  }

  // Columns belonging to the named segments, in the given order.
  FeatureMatrix project(const std::vector<std::string>& names) const {
    FeatureMatrix out;
    out.ids = ids;
    for (const auto& name : names) {
      const auto* seg = layout.find(name);
      require(seg != nullptr, ErrorKind::incompatible, "no feature segment '" + name + "'");
      out.layout.add(seg->name, seg->kind, seg->width);
    }
    out.values.resize(values.rows(), static_cast<Eigen::Index>(out.layout.width()));
    for (const auto& seg : out.layout.segments()) {
      const auto* src = layout.find(seg.name);
      out.values.middleCols(static_cast<Eigen::Index>(seg.offset),
                            static_cast<Eigen::Index>(seg.width)) =
          values.middleCols(static_cast<Eigen::Index>(src->offset),
                            static_cast<Eigen::Index>(src->width));
    }
    return out;
  }
};

// Dense coefficient vector aligned with `layout`. Every coefficient key must
// exist in the layout with a matching kind and width; segments without a
// coefficient contribute zero.
inline Eigen::VectorXd coefficient_vector(const LinearUtility& u, const FeatureLayout& layout) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.width()));
  for (const auto& [name, coef] : u.numerical) {
    const auto* seg = layout.find(name);
    require(seg && seg->kind == AttributeKind::numerical, ErrorKind::incompatible,
            "feature layout lacks numerical segment '" + name + "'");
    beta(static_cast<Eigen::Index>(seg->offset)) = coef;
  }
  for (const auto& [name, coefs] : u.textual) {
    const auto* seg = layout.find(name);
    require(seg && seg->kind == AttributeKind::textual, ErrorKind::incompatible,
            "feature layout lacks textual segment '" + name + "'");
    require(seg->width == coefs.size(), ErrorKind::incompatible,
            "segment '" + name + "' has width " + std::to_string(seg->width) +
                " but utility has " + std::to_string(coefs.size()) + " coefficients");
    for (std::size_t j = 0; j < coefs.size(); ++j) {
      beta(static_cast<Eigen::Index>(seg->offset + j)) = coefs[j];
    }
  }
  return beta;
}

// Inverse of coefficient_vector.
inline LinearUtility utility_from_vector(const Eigen::VectorXd& beta, const FeatureLayout& layout,
                                         double intercept = 0.0) {
  require(static_cast<std::size_t>(beta.size()) == layout.width(), ErrorKind::incompatible,
          "coefficient vector length does not match layout width");
  LinearUtility u;
  u.intercept = intercept;
  for (const auto& seg : layout.segments()) {
    if (seg.kind == AttributeKind::numerical) {
      u.numerical[seg.name] = beta(static_cast<Eigen::Index>(seg.offset));
    } else {
      auto& block = u.textual[seg.name];
      block.resize(seg.width);
      for (std::size_t j = 0; j < seg.width; ++j) {
        block[j] = beta(static_cast<Eigen::Index>(seg.offset + j));
      }
    }
  }
  return u;
}

inline double evaluate_utility(const LinearUtility& u, const FeatureLayout& layout,
                               std::span<const double> row) {
  require(row.size() == layout.width(), ErrorKind::incompatible,
          "feature row length does not match its layout");
  double total = 0.0;
  for (const auto& [name, coef] : u.numerical) {
    const auto* seg = layout.find(name);
    require(seg && seg->kind == AttributeKind::numerical, ErrorKind::incompatible,
            "feature layout lacks numerical segment '" + name + "'");
    total += coef * row[seg->offset];
  }
  for (const auto& [name, coefs] : u.textual) {
    const auto* seg = layout.find(name);
    require(seg && seg->kind == AttributeKind::textual && seg->width == coefs.size(),
            ErrorKind::incompatible, "feature layout incompatible with textual segment '" + name + "'");
    for (std::size_t j = 0; j < coefs.size(); ++j) total += coefs[j] * row[seg->offset + j];
  }
  return total + u.intercept;
}

inline double evaluate_utility(const LinearUtility& u, const FeatureVector& fv) {
  return evaluate_utility(u, fv.layout, fv.values);
}

// Scores every row; row i of the result corresponds to fm.ids[i].
inline std::vector<double> score_rows(const LinearUtility& u, const FeatureMatrix& fm) {
  Eigen::VectorXd beta = coefficient_vector(u, fm.layout);
  std::vector<double> out(fm.rows());
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      s += beta(j) * fm.values(static_cast<Eigen::Index>(i), j);
    }
    out[i] = s + u.intercept;
  }
  return out;
}

}  // namespace prefquery
