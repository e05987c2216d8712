#pragma once

// Eigen before httplib: <resolv.h> defines an _res macro that collides with Eigen.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/elicitation.hpp"
#include "prefquery/error.hpp"
#include "prefquery/estimation.hpp"
#include "prefquery/features.hpp"
#include "prefquery/queries.hpp"
#include "prefquery/text_graph.hpp"

namespace prefquery {

inline constexpr const char* kPortEnv = "PREFQUERY_PORT";
inline constexpr int kDefaultPort = 8080;

enum class ApiErrorCode { not_found, invalid_input, state_conflict, internal };

inline std::string_view to_string(ApiErrorCode c) {
  switch (c) {
    case ApiErrorCode::not_found: return "not_found";
    case ApiErrorCode::invalid_input: return "invalid_input";
    case ApiErrorCode::state_conflict: return "state_conflict";
    case ApiErrorCode::internal: return "internal";
  }
  return "internal";
}

inline int http_status(ApiErrorCode c) {
  switch (c) {
    case ApiErrorCode::not_found: return 404;
    case ApiErrorCode::invalid_input: return 400;
    case ApiErrorCode::state_conflict: return 409;
    case ApiErrorCode::internal: return 500;
  }
  return 500;
}

struct ApiError {
  ApiErrorCode code = ApiErrorCode::internal;
  std::string message;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;

  static ApiResponse error(ApiErrorCode code, std::string message) {
    return {http_status(code), {{"code", std::string(to_string(code))}, {"message", std::move(message)}}};
  }
};

struct SessionHandle {
  std::string id;
  std::string created_at;
  std::string dataset;
};

enum class FeatureScaling { rank_scaled, raw };

struct ServerOptions {
  std::optional<std::filesystem::path> state_dir;  // sessions persisted here on every mutation
  std::size_t embed_dim = kDefaultEmbedDim;
  FeatureOptions features;
  ElicitationConfig elicitation;
};

struct ServedDataset {
  std::string name;
  Dataset dataset;
};

// Session store plus the request handlers, independent of the HTTP transport.
// Sessions are single-writer: each has its own mutex, held for the whole of a
// mutation including persistence.
class SessionService {
 public:
  SessionService(std::vector<ServedDataset> datasets, ServerOptions options = {})
      : options_(std::move(options)), embedder_(options_.embed_dim) {
    for (auto& d : datasets) {
      const std::string name = d.name;
      require(datasets_.emplace(name, std::move(d.dataset)).second, ErrorKind::validation,
              "dataset '" + name + "' registered twice");
    }
    if (options_.state_dir) restore();
  }

  ApiResponse list_datasets() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [name, d] : datasets_) {
      nlohmann::json schema = nlohmann::json::array();
      for (const auto& a : d.schema()) {
        schema.push_back({{"name", a.name},
                          {"kind", std::string(to_string(a.kind))},
                          {"direction", std::string(to_string(a.direction))}});
      }
      out.push_back({{"name", name}, {"rows", d.size()}, {"schema", schema}});
    }
    return {200, out};
  }

  // Body: {"dataset", "ranking": [...], "q_budget", optional "scaling"
  // ("rank_scaled" | "raw"), optional "prior" (utility document)}.
  ApiResponse create_session(const nlohmann::json& body) {
    return guarded([&]() -> ApiResponse {
      if (!body.is_object()) return ApiResponse::error(ApiErrorCode::invalid_input, "body must be an object");
      if (!body.contains("dataset") || !body["dataset"].is_string()) {
        return ApiResponse::error(ApiErrorCode::invalid_input, "'dataset' must be a string");
      }
      const std::string name = body["dataset"].get<std::string>();
      auto dit = datasets_.find(name);
      if (dit == datasets_.end()) return ApiResponse::error(ApiErrorCode::not_found, "unknown dataset '" + name + "'");
      if (!body.contains("ranking") || !body["ranking"].is_array()) {
        return ApiResponse::error(ApiErrorCode::invalid_input, "'ranking' must be an array of attribute names");
      }
      if (!body.contains("q_budget") || !is_count(body["q_budget"])) {
        return ApiResponse::error(ApiErrorCode::invalid_input, "'q_budget' must be a nonnegative integer");
      }
      FeatureScaling scaling = FeatureScaling::rank_scaled;
      if (body.contains("scaling")) {
        const auto s = body["scaling"].get<std::string>();
        if (s == "raw") {
          scaling = FeatureScaling::raw;
        } else if (s != "rank_scaled") {
          return ApiResponse::error(ApiErrorCode::invalid_input, "'scaling' must be rank_scaled or raw");
        }
      }
      RankingInput ranking = make_ranking(dit->second.schema(), body["ranking"].get<std::vector<std::string>>());
      auto built = build_session_data(dit->second, ranking, scaling);
      LinearUtility prior = body.contains("prior") ? utility_from_json(body["prior"])
                                                   : default_prior(built.data->features.layout);
      validate_utility(prior, dit->second.schema());

      auto entry = std::make_shared<Entry>();
      entry->handle = {new_id(), now_iso8601(), name};
      entry->scaling = scaling;
      entry->max_x_num = built.max_x_num;
      entry->max_h_text = built.max_h_text;
      Session s = start_session(entry->handle.id, built.data, ranking, prior,
                                body["q_budget"].get<std::size_t>(), options_.elicitation);
      s.dataset_name = name;
      s.dataset_fingerprint = dit->second.fingerprint();
      std::optional<ComparisonQuestion> first;
      if (s.status == SessionStatus::collecting) {
        auto [asked, q] = ask_question(std::move(s));
        s = std::move(asked);
        first = q;
      }
      entry->session = std::move(s);
      persist(*entry);
      {
        std::unique_lock lock(store_mutex_);
        sessions_.emplace(entry->handle.id, entry);
      }
      nlohmann::json out = handle_json(*entry);
      out["status"] = std::string(to_string(entry->session.status));
      out["q_budget"] = entry->session.q_budget;
      out["answered"] = 0;
      out["question"] = first ? question_json(*first) : nlohmann::json(nullptr);
      return {201, out};
    });
  }

  ApiResponse get_session(const std::string& id) const {
    return guarded([&]() -> ApiResponse {
      auto entry = find(id);
      if (!entry) return ApiResponse::error(ApiErrorCode::not_found, "unknown session '" + id + "'");
      std::lock_guard lock(entry->mutex);
      return {200, session_document(*entry)};
    });
  }

  // Body: {"index": <question index>, "choice": "prefer_a" | "prefer_b" | "indifferent"}.
  ApiResponse post_answer(const std::string& id, const nlohmann::json& body) {
    return guarded([&]() -> ApiResponse {
      auto entry = find(id);
      if (!entry) return ApiResponse::error(ApiErrorCode::not_found, "unknown session '" + id + "'");
      if (!body.is_object() || !body.contains("index") || !is_count(body["index"]) ||
          !body.contains("choice") || !body["choice"].is_string()) {
        return ApiResponse::error(ApiErrorCode::invalid_input,
                                  "answer needs an unsigned 'index' and a string 'choice'");
      }
      Choice choice;
      try {
        choice = parse_choice(body["choice"].get<std::string>());
      } catch (const Error& e) {
        return ApiResponse::error(ApiErrorCode::invalid_input, e.what());
      }
      const auto index = body["index"].get<std::size_t>();

      std::lock_guard lock(entry->mutex);
      Session& s = entry->session;
      if (s.status != SessionStatus::collecting) {
        return ApiResponse::error(ApiErrorCode::state_conflict,
                                  "session is " + std::string(to_string(s.status)));
      }
      if (index < s.questions.size() && s.answered(index)) {
        return ApiResponse::error(ApiErrorCode::state_conflict,
                                  "question " + std::to_string(index) + " is already answered");
      }
      if (index >= s.questions.size()) {
        return ApiResponse::error(ApiErrorCode::invalid_input,
                                  "question " + std::to_string(index) + " was never asked");
      }
      Session next = record_answer(s, {index, choice});
      std::optional<ComparisonQuestion> question;
      if (next.status == SessionStatus::collecting) {
        auto [asked, q] = ask_question(std::move(next));
        next = std::move(asked);
        question = q;
      }
      Entry staged{};
      staged.handle = entry->handle;
      staged.scaling = entry->scaling;
      staged.session = next;
      persist(staged);
      s = std::move(next);

      nlohmann::json out{{"id", id},
                         {"status", std::string(to_string(s.status))},
                         {"answered", s.answers.size()},
                         {"q_budget", s.q_budget},
                         {"question", question ? question_json(*question) : nlohmann::json(nullptr)}};
      if (s.status != SessionStatus::collecting) out["result"] = "/sessions/" + id + "/result";
      return {200, out};
    });
  }

  // epsilon defaults to 0.05 and k to 1; bound_eps defaults to the estimate's
  // noise scale.
  ApiResponse get_result(const std::string& id, const std::optional<std::string>& epsilon_param,
                         const std::optional<std::string>& k_param,
                         const std::optional<std::string>& bound_eps_param = std::nullopt) const {
    return guarded([&]() -> ApiResponse {
      auto entry = find(id);
      if (!entry) return ApiResponse::error(ApiErrorCode::not_found, "unknown session '" + id + "'");
      auto epsilon = parse_number(epsilon_param, 0.05);
      if (!epsilon || *epsilon < 0.0) {
        return ApiResponse::error(ApiErrorCode::invalid_input, "epsilon must be a nonnegative number");
      }
      auto k = parse_number(k_param, 1.0);
      auto bound_eps = parse_number(bound_eps_param, -1.0);
      Session s;
      double max_x = 0.0, max_h = 0.0;
      {
        std::lock_guard lock(entry->mutex);
        s = entry->session;
        max_x = entry->max_x_num;
        max_h = entry->max_h_text;
      }
      const auto& fm = s.data->features;
      if (!k || *k < 1.0 || *k != std::floor(*k) || *k > static_cast<double>(fm.rows())) {
        return ApiResponse::error(ApiErrorCode::invalid_input,
                                  "k must be an integer in [1, " + std::to_string(fm.rows()) + "]");
      }
      if (!bound_eps || (bound_eps_param && *bound_eps < 0.0)) {
        return ApiResponse::error(ApiErrorCode::invalid_input, "bound_eps must be a nonnegative number");
      }
      return {200, result_document(s, *epsilon, static_cast<std::size_t>(*k),
                                   bound_eps_param ? *bound_eps : s.estimate.epsilon_noise, max_x, max_h)};
    });
  }

  // Library-level view of one session, for callers that bypass HTTP.
  std::optional<Session> snapshot(const std::string& id) const {
    auto entry = find(id);
    if (!entry) return std::nullopt;
    std::lock_guard lock(entry->mutex);
    return entry->session;
  }

  // Shared with get_result so both paths produce identical documents.
  static nlohmann::json result_document(const Session& s, double epsilon, std::size_t k,
                                        double bound_eps, double max_x_num, double max_h_text) {
    const auto& fm = s.data->features;
    auto scored = score_tuples(s.estimate, fm);
    auto indist = indistinguishability_query(scored, epsilon);
    auto top = top_k(scored, k);
    std::sort(scored.begin(), scored.end(), ranks_before);
    BoundInputs b{fm.layout.names_of(AttributeKind::numerical).size(),
                  fm.layout.names_of(AttributeKind::textual).size(),
                  fm.rows(),
                  s.answers.size(),
                  max_x_num,
                  max_h_text,
                  bound_eps};
    auto list = [](const std::vector<ScoredTuple>& v) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& t : v) out.push_back({{"id", t.id}, {"score", t.score}});
      return out;
    };
    return {{"id", s.id},
            {"status", std::string(to_string(s.status))},
            {"epsilon", epsilon},
            {"k", k},
            {"indistinguishable", list(indist.selected)},
            {"top_k", list(top.selected)},
            {"scores", list(scored)},
            {"bound",
             {{"m", b.m},
              {"n", b.n},
              {"N", b.N},
              {"q", b.q},
              {"max_x_num", b.max_x_num},
              {"max_h_text", b.max_h_text},
              {"eps", b.eps},
              {"value", compute_error_bound(b)}}}};
  }

  const Embedder& embedder() const noexcept { return embedder_; }

  struct BuiltData {
    std::shared_ptr<const SessionData> data;
    double max_x_num = 0.0;
    double max_h_text = 0.0;
  };

  BuiltData build_session_data(const Dataset& dataset, const RankingInput& ranking,
                               FeatureScaling scaling) const {
    const Dataset source = scaling == FeatureScaling::rank_scaled ? rank_scale(dataset, ranking).dataset
                                                                  : dataset;
    auto bundle = build_features(source, embedder_, options_.features);
    return {std::make_shared<const SessionData>(std::move(bundle.matrix)), bundle.max_x_num,
            bundle.max_h_text};
  }

  // One on every numerical feature; zero on embeddings.
  static LinearUtility default_prior(const FeatureLayout& layout) {
    LinearUtility u;
    for (const auto& name : layout.names_of(AttributeKind::numerical)) u.numerical[name] = 1.0;
    return u;
  }

 private:
  struct Entry {
    mutable std::mutex mutex;
    SessionHandle handle;
    FeatureScaling scaling = FeatureScaling::rank_scaled;
    double max_x_num = 0.0;
    double max_h_text = 0.0;
    Session session;
  };

  template <typename F>
  static ApiResponse guarded(F&& body) {
    try {
      return body();
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::validation:
        case ErrorKind::domain:
        case ErrorKind::incompatible:
          return ApiResponse::error(ApiErrorCode::invalid_input, e.what());
        case ErrorKind::state:
          return ApiResponse::error(ApiErrorCode::state_conflict, e.what());
        default:
          return ApiResponse::error(ApiErrorCode::internal, e.what());
      }
    } catch (const nlohmann::json::exception& e) {
      return ApiResponse::error(ApiErrorCode::invalid_input, e.what());
    } catch (const std::exception& e) {
      return ApiResponse::error(ApiErrorCode::internal, e.what());
    }
  }

  static bool is_count(const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }

  static std::optional<double> parse_number(const std::optional<std::string>& text, double fallback) {
    if (!text) return fallback;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text->data(), text->data() + text->size(), v);
    if (ec != std::errc() || ptr != text->data() + text->size() || !std::isfinite(v)) return std::nullopt;
    return v;
  }

  static nlohmann::json question_json(const ComparisonQuestion& q) {
    return {{"index", q.index}, {"a", q.a}, {"b", q.b}};
  }

  static nlohmann::json handle_json(const Entry& e) {
    return {{"id", e.handle.id}, {"created_at", e.handle.created_at}, {"dataset", e.handle.dataset}};
  }

  static nlohmann::json session_document(const Entry& e) {
    nlohmann::json doc = session_to_json(e.session);
    doc["created_at"] = e.handle.created_at;
    doc["scaling"] = e.scaling == FeatureScaling::raw ? "raw" : "rank_scaled";
    const auto* q = e.session.status == SessionStatus::collecting ? e.session.outstanding() : nullptr;
    doc["question"] = q ? question_json(*q) : nlohmann::json(nullptr);
    return doc;
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::shared_lock lock(store_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::string new_id() {
    std::lock_guard lock(id_mutex_);
    static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
    for (;;) {
      std::string id;
      for (int i = 0; i < 16; ++i) id.push_back(kAlphabet[id_rng_() % 36]);
      std::shared_lock lock2(store_mutex_);
      if (!sessions_.count(id) && issued_.insert(id).second) return id;
    }
  }

  static std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  void persist(const Entry& e) const {
    if (!options_.state_dir) return;
    std::filesystem::create_directories(*options_.state_dir);
    const auto path = *options_.state_dir / (e.handle.id + ".json");
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      require(static_cast<bool>(out), ErrorKind::io, "cannot write " + tmp);
      out << session_document(e).dump(2) << '\n';
      require(static_cast<bool>(out), ErrorKind::io, "write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  void restore() {
    if (!std::filesystem::exists(*options_.state_dir)) return;
    for (const auto& file : std::filesystem::directory_iterator(*options_.state_dir)) {
      if (file.path().extension() != ".json") continue;
      std::ifstream in(file.path());
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::io, file.path().string() + ": " + e.what());
      }
      const std::string name = doc.at("dataset").get<std::string>();
      auto dit = datasets_.find(name);
      require(dit != datasets_.end(), ErrorKind::validation,
              file.path().string() + ": dataset '" + name + "' is not loaded");
      require(doc.at("dataset_fingerprint").get<std::string>() == dit->second.fingerprint(),
              ErrorKind::validation, file.path().string() + ": dataset fingerprint changed");
      auto entry = std::make_shared<Entry>();
      entry->scaling = doc.value("scaling", "rank_scaled") == "raw" ? FeatureScaling::raw
                                                                    : FeatureScaling::rank_scaled;
      const auto order = doc.at("ranking").at("order").get<std::vector<std::string>>();
      auto built = build_session_data(dit->second, make_ranking(dit->second.schema(), order), entry->scaling);
      entry->session = session_from_json(doc, built.data);
      entry->max_x_num = built.max_x_num;
      entry->max_h_text = built.max_h_text;
      entry->handle = {entry->session.id, doc.value("created_at", ""), name};
      issued_.insert(entry->handle.id);
      sessions_.emplace(entry->handle.id, std::move(entry));
    }
  }

  ServerOptions options_;
  HashingEmbedder embedder_;
  std::map<std::string, Dataset> datasets_;
  mutable std::shared_mutex store_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mutex id_mutex_;
  std::mt19937_64 id_rng_{std::random_device{}()};
  std::set<std::string> issued_;
};

// HTTP transport over SessionService.
class HttpServer {
 public:
  explicit HttpServer(SessionService& service) : service_(service) {
    auto reply = [](httplib::Response& res, const ApiResponse& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json; charset=utf-8");
    };
    auto parse_body = [](const httplib::Request& req) -> std::optional<nlohmann::json> {
      try {
        return nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error&) {
        return std::nullopt;
      }
    };
    auto param = [](const httplib::Request& req, const char* key) -> std::optional<std::string> {
      if (!req.has_param(key)) return std::nullopt;
      return req.get_param_value(key);
    };

    server_.Get("/datasets", [this, reply](const httplib::Request&, httplib::Response& res) {
      reply(res, service_.list_datasets());
    });
    server_.Post("/sessions", [this, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
      auto body = parse_body(req);
      reply(res, body ? service_.create_session(*body)
                      : ApiResponse::error(ApiErrorCode::invalid_input, "body is not valid JSON"));
    });
    server_.Get(R"(/sessions/([A-Za-z0-9_-]+))",
                [this, reply](const httplib::Request& req, httplib::Response& res) {
                  reply(res, service_.get_session(req.matches[1]));
                });
    server_.Post(R"(/sessions/([A-Za-z0-9_-]+)/answers)",
                 [this, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
                   auto body = parse_body(req);
                   reply(res, body ? service_.post_answer(req.matches[1], *body)
                                   : ApiResponse::error(ApiErrorCode::invalid_input, "body is not valid JSON"));
                 });
    server_.Get(R"(/sessions/([A-Za-z0-9_-]+)/result)",
                [this, reply, param](const httplib::Request& req, httplib::Response& res) {
                  reply(res, service_.get_result(req.matches[1], param(req, "epsilon"), param(req, "k"),
                                                 param(req, "bound_eps")));
                });
    server_.set_error_handler([reply](const httplib::Request&, httplib::Response& res) {
      if (res.status == 404 && res.body.empty()) {
        reply(res, ApiResponse::error(ApiErrorCode::not_found, "no such route"));
      }
    });
    server_.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      reply(res, ApiResponse::error(ApiErrorCode::internal, "unhandled server error"));
    });
  }

  ~HttpServer() { stop(); }

  // Binds to an ephemeral port when `port` is 0; returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      const int bound = server_.bind_to_any_port(host);
      require(bound > 0, ErrorKind::io, "cannot bind " + host + " to an ephemeral port");
      return bound;
    }
    require(server_.bind_to_port(host, port), ErrorKind::io,
            "cannot bind " + host + ":" + std::to_string(port));
    return port;
  }

  void listen_after_bind() { server_.listen_after_bind(); }

  void start_background() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  SessionService& service_;
  httplib::Server server_;
  std::thread thread_;
};

// --port wins, then PREFQUERY_PORT, then 8080.
inline int resolve_port(std::optional<int> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kPortEnv); env != nullptr && *env != '\0') {
    int port = 0;
    auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), port);
    require(ec == std::errc() && *ptr == '\0' && port > 0 && port < 65536, ErrorKind::validation,
            std::string(kPortEnv) + " is not a valid port");
    return port;
  }
  return kDefaultPort;
}

}  // namespace prefquery
