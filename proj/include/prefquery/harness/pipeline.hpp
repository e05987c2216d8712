#pragma once

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/elicitation.hpp"
#include "prefquery/error.hpp"
#include "prefquery/estimation.hpp"
#include "prefquery/features.hpp"
#include "prefquery/queries.hpp"
#include "prefquery/text_graph.hpp"

namespace prefquery {

inline constexpr int kManifestVersion = 1;

struct PipelineOptions {
  std::size_t k = 10;
  double epsilon = 0.05;
  std::size_t embed_dim = kDefaultEmbedDim;
  bool include_text = true;
  GnnConfig gnn;
  GraphConfig graph;
  RidgeConfig ridge;
  std::size_t q_budget = 0;
  ElicitationConfig elicitation;
  std::uint64_t seed = 0;
  std::optional<double> bound_eps;  // defaults to the refit's residual std
};

using AnswerSource = std::function<ComparisonAnswer(const ComparisonQuestion&, const SessionData&)>;

struct PipelineResult {
  ScaledDataset scaled;
  FeatureBundle features;
  std::vector<double> labels;
  std::string label_source;
  std::optional<FitResult> fit_num;
  std::optional<FitResult> fit_text;
  LinearUtility u_syn;
  std::optional<Session> session;
  FitResult real;
  QueryResult optimal;
  QueryResult indistinguishable;
  BoundInputs bound_inputs;
  double bound = 0.0;
  nlohmann::json manifest;
};

// Answers comparisons by label: the higher label wins, equal labels tie.
inline AnswerSource label_oracle(std::vector<double> labels) {
  auto shared = std::make_shared<const std::vector<double>>(std::move(labels));
  return [shared](const ComparisonQuestion& q, const SessionData& data) {
    const double la = shared->at(data.row(q.a));
    const double lb = shared->at(data.row(q.b));
    if (la == lb) return ComparisonAnswer{q.index, Choice::indifferent};
    return ComparisonAnswer{q.index, la > lb ? Choice::prefer_a : Choice::prefer_b};
  };
}

// Sum of rank-scaled numerical values: labels implied by the ranking alone.
inline std::vector<double> rank_prior_labels(const Dataset& scaled) {
  std::vector<double> out(scaled.size(), 0.0);
  for (const auto& name : scaled.names_of(AttributeKind::numerical)) {
    auto col = scaled.numerical(name);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += col[i];
  }
  return out;
}

inline std::string labels_fingerprint(std::span<const double> labels) {
  Sha256 h;
  for (double v : labels) h.update(v);
  return h.hex();
}

namespace detail {

template <typename F>
auto run_stage(const char* name, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

inline nlohmann::json scored_json(const QueryResult& r) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : r.selected) out.push_back({{"id", s.id}, {"score", s.score}});
  return out;
}

inline nlohmann::json options_json(const PipelineOptions& o) {
  return {
      {"k", o.k},
      {"epsilon", o.epsilon},
      {"embed_dim", o.embed_dim},
      {"include_text", o.include_text},
      {"gnn_layers", o.gnn.layers},
      {"gnn_self_weight", o.gnn.self_weight},
      {"cross_kind_weight", o.graph.cross_kind_weight},
      {"ridge_lambda", o.ridge.lambda},
      {"q_budget", o.q_budget},
      {"elicitation",
       {{"lambda", o.elicitation.lambda},
        {"margin", o.elicitation.margin},
        {"indifferent_weight", o.elicitation.indifferent_weight},
        {"pool_size", o.elicitation.pool_size},
        {"max_sweeps", o.elicitation.max_sweeps},
        {"tolerance", o.elicitation.tolerance},
        {"min_lambda", o.elicitation.min_lambda}}},
      {"seed", o.seed},
      {"bound_eps", o.bound_eps ? nlohmann::json(*o.bound_eps) : nlohmann::json(nullptr)},
  };
}

inline PipelineOptions options_from_json(const nlohmann::json& j) {
  PipelineOptions o;
  o.k = j.at("k").get<std::size_t>();
  o.epsilon = j.at("epsilon").get<double>();
  o.embed_dim = j.at("embed_dim").get<std::size_t>();
  o.include_text = j.at("include_text").get<bool>();
  o.gnn.layers = j.at("gnn_layers").get<std::size_t>();
  o.gnn.self_weight = j.at("gnn_self_weight").get<double>();
  o.graph.cross_kind_weight = j.at("cross_kind_weight").get<double>();
  o.ridge.lambda = j.at("ridge_lambda").get<double>();
  o.q_budget = j.at("q_budget").get<std::size_t>();
  const auto& e = j.at("elicitation");
  o.elicitation.lambda = e.at("lambda").get<double>();
  o.elicitation.margin = e.at("margin").get<double>();
  o.elicitation.indifferent_weight = e.at("indifferent_weight").get<double>();
  o.elicitation.pool_size = e.at("pool_size").get<std::size_t>();
  o.elicitation.max_sweeps = e.at("max_sweeps").get<std::size_t>();
  o.elicitation.tolerance = e.at("tolerance").get<double>();
  o.elicitation.min_lambda = e.at("min_lambda").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("bound_eps").is_null()) o.bound_eps = j.at("bound_eps").get<double>();
  return o;
}

}  // namespace detail

// rank_scale -> features (embed + message pass) -> fit_numerical / fit_textual
// -> synthetic utility -> optional elicitation -> refine -> optimal subsets.
// Without labels, the rank-implied scores stand in. With a question budget,
// the refit uses the elicited estimate's scores as labels.
inline PipelineResult run_pipeline(const Dataset& dataset, const RankingInput& ranking,
                                   const std::optional<std::vector<double>>& labels,
                                   const PipelineOptions& options, const Embedder& embedder,
                                   AnswerSource answers = {}) {
  PipelineResult r;
  r.scaled = detail::run_stage("rank_scale", [&] { return rank_scale(dataset, ranking); });
  r.features = detail::run_stage("features", [&] {
    return build_features(r.scaled.dataset, embedder, {options.include_text, options.gnn, options.graph});
  });
  const FeatureMatrix& fm = r.features.matrix;

  detail::run_stage("labels", [&] {
    if (labels) {
      require(labels->size() == dataset.size(), ErrorKind::validation,
              "label count does not match dataset rows");
      r.labels = *labels;
      r.label_source = "provided";
    } else {
      r.labels = rank_prior_labels(r.scaled.dataset);
      r.label_source = "rank_prior";
    }
    return 0;
  });

  const auto numerical = fm.layout.names_of(AttributeKind::numerical);
  const auto textual = fm.layout.names_of(AttributeKind::textual);
  if (!numerical.empty()) {
    r.fit_num = detail::run_stage("fit_numerical", [&] {
      return fit_numerical(fm.project(numerical), r.labels, options.ridge);
    });
  }
  if (!textual.empty()) {
    r.fit_text = detail::run_stage("fit_textual", [&] {
      return fit_textual(fm.project(textual), r.labels, options.ridge);
    });
  }
  r.u_syn = detail::run_stage("synthetic_utility", [&] {
    return build_synthetic_utility(r.fit_num.value_or(FitResult{}), r.fit_text.value_or(FitResult{}),
                                   r.scaled.weights);
  });

  std::vector<double> refine_labels = r.labels;
  if (options.q_budget > 0) {
    detail::run_stage("elicitation", [&] {
      AnswerSource source = answers ? answers : label_oracle(r.labels);
      auto data = std::make_shared<const SessionData>(fm);
      Session s = start_session("pipeline", data, ranking, r.u_syn, options.q_budget,
                                options.elicitation);
      s.dataset_fingerprint = dataset.fingerprint();
      while (s.status == SessionStatus::collecting) {
        auto [asked, q] = ask_question(std::move(s));
        s = record_answer(std::move(asked), source(q, *data));
      }
      refine_labels = score_rows(s.estimate, fm);
      r.session = std::move(s);
      return 0;
    });
  }

  r.real = detail::run_stage("refine_real_utility", [&] {
    return refine_real_utility(r.u_syn, fm, refine_labels, options.ridge);
  });
  detail::run_stage("optimal_subsets", [&] {
    r.optimal = optimal_subsets(r.real.coefficients, fm, options.k);
    r.indistinguishable = indistinguishability_query(score_tuples(r.real.coefficients, fm), options.epsilon);
    return 0;
  });
  r.bound = detail::run_stage("error_bound", [&] {
    r.bound_inputs = {numerical.size(),
                      textual.size(),
                      dataset.size(),
                      r.session ? r.session->answers.size() : 0,
                      r.features.max_x_num,
                      r.features.max_h_text,
                      options.bound_eps.value_or(residual_std(r.real.residuals))};
    return compute_error_bound(r.bound_inputs);
  });

  nlohmann::json answers_json = nlohmann::json::array();
  if (r.session) {
    for (const auto& a : r.session->answers) {
      const auto& q = r.session->questions.at(a.index);
      answers_json.push_back(
          {{"index", a.index}, {"a", q.a}, {"b", q.b}, {"choice", std::string(to_string(a.choice))}});
    }
  }
  r.manifest = {
      {"version", kManifestVersion},
      {"dataset_fingerprint", dataset.fingerprint()},
      {"dataset_rows", dataset.size()},
      {"labels", {{"source", r.label_source}, {"fingerprint", labels_fingerprint(r.labels)}}},
      {"ranking", {{"order", ranking.order}, {"weights", ranking.weights}}},
      {"options", detail::options_json(options)},
      {"embedder", embedder.identifier()},
      {"answers", answers_json},
      {"bound",
       {{"m", r.bound_inputs.m},
        {"n", r.bound_inputs.n},
        {"N", r.bound_inputs.N},
        {"q", r.bound_inputs.q},
        {"max_x_num", r.bound_inputs.max_x_num},
        {"max_h_text", r.bound_inputs.max_h_text},
        {"eps", r.bound_inputs.eps},
        {"value", r.bound}}},
      {"result",
       {{"u_real", utility_to_json(r.real.coefficients)},
        {"sse", r.real.sse},
        {"optimal", detail::scored_json(r.optimal)},
        {"indistinguishable", detail::scored_json(r.indistinguishable)}}},
      {"warnings", r.scaled.warnings},
  };
  return r;
}

inline PipelineResult run_pipeline(const Dataset& dataset, const RankingInput& ranking,
                                   const std::optional<std::vector<double>>& labels,
                                   const PipelineOptions& options) {
  HashingEmbedder embedder(options.embed_dim);
  return run_pipeline(dataset, ranking, labels, options, embedder);
}

struct ReplayInputs {
  RankingInput ranking;
  PipelineOptions options;
  AnswerSource answers;
};

// Reconstructs the run configuration from a manifest, checking that the
// dataset and labels are the ones the manifest was produced from.
inline ReplayInputs replay_inputs(const nlohmann::json& manifest, const Dataset& dataset,
                                  const std::optional<std::vector<double>>& labels) {
  try {
    require(manifest.at("version").get<int>() == kManifestVersion, ErrorKind::validation,
            "unsupported manifest version");
    require(manifest.at("dataset_fingerprint").get<std::string>() == dataset.fingerprint(),
            ErrorKind::validation, "dataset does not match the manifest fingerprint");
    const auto& lab = manifest.at("labels");
    if (lab.at("source").get<std::string>() == "provided") {
      require(labels.has_value() &&
                  labels_fingerprint(*labels) == lab.at("fingerprint").get<std::string>(),
              ErrorKind::validation, "labels do not match the manifest fingerprint");
    }
    ReplayInputs in;
    const auto weights = manifest.at("ranking").at("weights").get<std::map<std::string, double>>();
    auto order = manifest.at("ranking").at("order").get<std::vector<std::string>>();
    in.ranking = make_ranking(dataset.schema(), order, [&](std::size_t rank, std::size_t) {
      return weights.at(order[rank - 1]);
    });
    in.options = detail::options_from_json(manifest.at("options"));
    auto recorded = std::make_shared<std::vector<nlohmann::json>>();
    for (const auto& a : manifest.at("answers")) recorded->push_back(a);
    in.answers = [recorded](const ComparisonQuestion& q, const SessionData&) {
      require(q.index < recorded->size(), ErrorKind::validation,
              "manifest has no answer for question " + std::to_string(q.index));
      const auto& a = (*recorded)[q.index];
      require(a.at("a").get<std::string>() == q.a && a.at("b").get<std::string>() == q.b,
              ErrorKind::validation, "replayed question differs from the manifest");
      return ComparisonAnswer{q.index, parse_choice(a.at("choice").get<std::string>())};
    };
    return in;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("malformed manifest: ") + e.what());
  }
}

inline PipelineResult replay_pipeline(const nlohmann::json& manifest, const Dataset& dataset,
                                      const std::optional<std::vector<double>>& labels,
                                      const Embedder& embedder) {
  ReplayInputs in = replay_inputs(manifest, dataset, labels);
  require(manifest.value("embedder", std::string()) == embedder.identifier(), ErrorKind::validation,
          "embedder differs from the manifest");
  return run_pipeline(dataset, in.ranking, labels, in.options, embedder, in.answers);
}

inline PipelineResult replay_pipeline(const nlohmann::json& manifest, const Dataset& dataset,
                                      const std::optional<std::vector<double>>& labels) {
  std::size_t dim = 0;
  try {
    dim = manifest.at("options").at("embed_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, std::string("malformed manifest: ") + e.what());
  }
  HashingEmbedder embedder(dim);
  return replay_pipeline(manifest, dataset, labels, embedder);
}

}  // namespace prefquery
