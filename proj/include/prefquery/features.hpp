#pragma once

#include <Eigen/Dense>

#include <string>
#include <unordered_map>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/text_graph.hpp"

namespace prefquery {

struct FeatureOptions {
  bool include_text = true;
  GnnConfig gnn;
  GraphConfig graph;
};

struct FeatureBundle {
  FeatureMatrix matrix;
  AttributeGraph graph;
  double max_x_num = 0.0;   // largest numerical feature value
  double max_h_text = 0.0;  // largest L2 norm of a textual segment
};

// Materializes feature rows from an already rank-scaled dataset: numerical
// values copied, each textual value embedded then mixed across the tuple's
// textual attributes by the message-passing operator.
inline FeatureBundle build_features(const Dataset& scaled, const Embedder& embedder,
                                    const FeatureOptions& options = {}) {
  const auto numerical = scaled.names_of(AttributeKind::numerical);
  const auto textual = options.include_text ? scaled.names_of(AttributeKind::textual)
                                            : std::vector<std::string>{};
  const std::size_t dim = embedder.dim();
  const auto rows = static_cast<Eigen::Index>(scaled.size());

  FeatureBundle out;
  out.matrix.layout = FeatureLayout(numerical, textual, dim);
  out.matrix.ids = scaled.ids();
  out.matrix.values.resize(rows, static_cast<Eigen::Index>(out.matrix.layout.width()));

  for (std::size_t c = 0; c < numerical.size(); ++c) {
    auto col = scaled.numerical(numerical[c]);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double v = col[static_cast<std::size_t>(i)];
      out.matrix.values(i, static_cast<Eigen::Index>(c)) = v;
      out.max_x_num = std::max(out.max_x_num, v);
    }
  }
  if (textual.empty() || scaled.size() == 0) return out;

  out.graph = build_attribute_graph(scaled, embedder, options.graph);
  const Eigen::MatrixXd mixing = message_pass_operator(out.graph, textual, options.gnn);

  std::unordered_map<std::string, Eigen::VectorXd> memo;
  auto lookup = [&](const std::string& text) -> const Eigen::VectorXd& {
    auto it = memo.find(text);
    if (it == memo.end()) {
      auto e = embed_text(embedder, text).values;
      it = memo.emplace(text, Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size())))
               .first;
    }
    return it->second;
  };

  std::vector<const std::vector<std::string>*> columns;
  for (const auto& name : textual) columns.push_back(&scaled.textual(name));
  const auto n_text = static_cast<Eigen::Index>(textual.size());
  const auto d = static_cast<Eigen::Index>(dim);
  const auto base = static_cast<Eigen::Index>(numerical.size());
  Eigen::MatrixXd raw(n_text, d);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index a = 0; a < n_text; ++a) {
      raw.row(a) = lookup((*columns[static_cast<std::size_t>(a)])[static_cast<std::size_t>(i)]).transpose();
    }
    const Eigen::MatrixXd mixed = mixing * raw;
    for (Eigen::Index a = 0; a < n_text; ++a) {
      out.matrix.values.block(i, base + a * d, 1, d) = mixed.row(a);
      out.max_h_text = std::max(out.max_h_text, mixed.row(a).norm());
    }
  }
  return out;
}

}  // namespace prefquery
