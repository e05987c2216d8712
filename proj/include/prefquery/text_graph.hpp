#pragma once

#include <Eigen/Dense>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/error.hpp"

namespace prefquery {

inline constexpr std::size_t kDefaultEmbedDim = 64;

struct EmbeddingVector {
  std::vector<double> values;
  std::string attribute;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

// Text -> fixed-dimension vector. Implementations must be deterministic and
// safe to call concurrently.
class Embedder {
 public:
  virtual ~Embedder() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string identifier() const = 0;
  virtual std::vector<double> embed(std::string_view text) const = 0;

  virtual std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) const {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
  }
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Character 3-gram feature hashing. Text is ASCII-lowercased and padded with
// one space on each side; gram counts are bucketed by FNV-1a and L2-normalized.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dim = kDefaultEmbedDim) : dim_(dim) {
    require(dim_ >= 1, ErrorKind::validation, "embedding dimension must be >= 1");
  }

  std::size_t dim() const override { return dim_; }
  std::string identifier() const override { return "hash3gram-fnv1a-" + std::to_string(dim_); }

  std::vector<double> embed(std::string_view text) const override {
    std::vector<double> v(dim_, 0.0);
    if (text.empty()) return v;
    std::string padded;
    padded.reserve(text.size() + 2);
    padded.push_back(' ');
    for (unsigned char c : text) padded.push_back(static_cast<char>(std::tolower(c)));
    padded.push_back(' ');
    std::string_view view(padded);
    for (std::size_t i = 0; i + 3 <= view.size(); ++i) {
      v[fnv1a64(view.substr(i, 3)) % dim_] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
  }

 private:
  std::size_t dim_;
};

inline EmbeddingVector embed_text(const Embedder& embedder, std::string_view text,
                                  std::string attribute = {}) {
  EmbeddingVector out{embedder.embed(text), std::move(attribute)};
  require(out.values.size() == embedder.dim(), ErrorKind::protocol,
          "embedder '" + embedder.identifier() + "' returned a vector of the wrong dimension");
  for (double v : out.values) {
    require(std::isfinite(v), ErrorKind::protocol, "embedder returned a non-finite value");
  }
  return out;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::validation, "cosine of vectors of unequal length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && !x.empty(), ErrorKind::validation,
          "correlation needs two nonempty columns of equal length");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct GraphNode {
  std::string name;
  AttributeKind kind = AttributeKind::numerical;
};

struct GraphEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double weight = 0.0;
};

// Undirected weighted graph over attributes. Weights live in a dense
// symmetric matrix with a zero diagonal.
class AttributeGraph {
 public:
  AttributeGraph() = default;

  explicit AttributeGraph(std::vector<GraphNode> nodes)
      : nodes_(std::move(nodes)),
        weights_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes_.size()),
                                       static_cast<Eigen::Index>(nodes_.size()))) {}

  const std::vector<GraphNode>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].name == name) return i;
    }
    fail(ErrorKind::validation, "graph has no node '" + std::string(name) + "'");
  }

  void set_weight(std::size_t a, std::size_t b, double w) {
    require(a != b, ErrorKind::validation, "attribute graph forbids self-loops");
    require(w >= 0.0 && w <= 1.0, ErrorKind::validation, "edge weight outside [0,1]");
    weights_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = w;
    weights_(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = w;
  }

  double weight(std::size_t a, std::size_t b) const {
    return weights_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  }

  double weight(std::string_view a, std::string_view b) const {
    return weight(index_of(a), index_of(b));
  }

  // Edges with positive weight, a < b.
  std::vector<GraphEdge> edges() const {
    std::vector<GraphEdge> out;
    for (std::size_t a = 0; a < nodes_.size(); ++a) {
      for (std::size_t b = a + 1; b < nodes_.size(); ++b) {
        if (weight(a, b) > 0.0) out.push_back({a, b, weight(a, b)});
      }
    }
    return out;
  }

 private:
  std::vector<GraphNode> nodes_;
  Eigen::MatrixXd weights_;
};

struct GraphConfig {
  double cross_kind_weight = 0.0;
};

// Per-attribute mean embedding over all rows. Distinct strings are embedded once.
inline std::vector<double> mean_embedding(const Embedder& embedder,
                                          const std::vector<std::string>& column) {
  std::vector<double> mean(embedder.dim(), 0.0);
  std::unordered_map<std::string, std::vector<double>> memo;
  for (const auto& text : column) {
    auto it = memo.find(text);
    if (it == memo.end()) it = memo.emplace(text, embed_text(embedder, text).values).first;
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += it->second[j];
  }
  for (double& v : mean) v /= static_cast<double>(column.size());
  return mean;
}

// Numerical pairs: |Pearson r|. Textual pairs: cosine of mean embeddings.
// Cross-kind pairs: a configured constant. All clamped to [0,1].
inline AttributeGraph build_attribute_graph(const Dataset& dataset, const Embedder& embedder,
                                            const GraphConfig& config = {}) {
  require(dataset.size() > 0, ErrorKind::validation, "cannot build a graph from an empty dataset");
  std::vector<GraphNode> nodes;
  for (const auto& a : dataset.schema()) nodes.push_back({a.name, a.kind});
  AttributeGraph graph(nodes);

  std::map<std::size_t, std::vector<double>> means;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].kind == AttributeKind::textual) {
      means[i] = mean_embedding(embedder, dataset.textual(nodes[i].name));
    }
  }
  for (std::size_t a = 0; a < nodes.size(); ++a) {
    for (std::size_t b = a + 1; b < nodes.size(); ++b) {
      double w = 0.0;
      if (nodes[a].kind != nodes[b].kind) {
        w = config.cross_kind_weight;
      } else if (nodes[a].kind == AttributeKind::numerical) {
        w = std::abs(pearson_correlation(dataset.numerical(nodes[a].name),
                                         dataset.numerical(nodes[b].name)));
      } else {
        w = cosine_similarity(means[a], means[b]);
      }
      graph.set_weight(a, b, std::clamp(w, 0.0, 1.0));
    }
  }
  return graph;
}

struct GnnConfig {
  std::size_t layers = 1;
  double self_weight = 0.75;

  void validate() const {
    require(self_weight >= 0.0 && self_weight <= 1.0, ErrorKind::validation,
            "GNN self weight must lie in [0,1]");
  }
};

// Fixed-weight neighborhood averaging. Each layer sets
//   h_v <- a*h_v + (1-a) * sum_u w_vu h_u / sum_u w_vu
// over neighbors u that carry an embedding. Nodes without such neighbors keep
// their vector.
inline std::map<std::string, EmbeddingVector> message_pass(
    const AttributeGraph& graph, const std::map<std::string, EmbeddingVector>& embeddings,
    const GnnConfig& config) {
  config.validate();
  std::size_t dim = 0;
  bool first = true;
  for (const auto& [name, e] : embeddings) {
    graph.index_of(name);
    if (first) {
      dim = e.dim();
      first = false;
    }
    require(e.dim() == dim, ErrorKind::validation, "embedding dimensions disagree");
  }
  for (const auto& node : graph.nodes()) {
    if (node.kind == AttributeKind::textual) {
      require(embeddings.count(node.name) == 1, ErrorKind::validation,
              "textual attribute '" + node.name + "' has no embedding");
    }
  }

  std::map<std::string, EmbeddingVector> current = embeddings;
  for (std::size_t layer = 0; layer < config.layers; ++layer) {
    std::map<std::string, EmbeddingVector> next = current;
    for (auto& [name, out] : next) {
      const std::size_t v = graph.index_of(name);
      std::vector<double> acc(dim, 0.0);
      double total = 0.0;
      for (const auto& [other, e] : current) {
        if (other == name) continue;
        const double w = graph.weight(v, graph.index_of(other));
        if (w <= 0.0) continue;
        total += w;
        for (std::size_t j = 0; j < dim; ++j) acc[j] += w * e.values[j];
      }
      if (total <= 0.0) continue;
      const auto& own = current.at(name).values;
      for (std::size_t j = 0; j < dim; ++j) {
        out.values[j] = config.self_weight * own[j] + (1.0 - config.self_weight) * acc[j] / total;
      }
    }
    current = std::move(next);
  }
  return current;
}

// The linear operator that `message_pass` applies, restricted to the given
// textual nodes: row a holds the mixing weights producing node a's output.
inline Eigen::MatrixXd message_pass_operator(const AttributeGraph& graph,
                                             const std::vector<std::string>& textual,
                                             const GnnConfig& config) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(textual.size());
  Eigen::MatrixXd layer = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const std::size_t va = graph.index_of(textual[static_cast<std::size_t>(a)]);
    double total = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a != b) total += graph.weight(va, graph.index_of(textual[static_cast<std::size_t>(b)]));
    }
    if (total <= 0.0) continue;
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b) {
        layer(a, b) = config.self_weight;
      } else {
        const double w = graph.weight(va, graph.index_of(textual[static_cast<std::size_t>(b)]));
        layer(a, b) = (1.0 - config.self_weight) * w / total;
      }
    }
  }
  Eigen::MatrixXd op = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t i = 0; i < config.layers; ++i) op = layer * op;
  return op;
}

}  // namespace prefquery
