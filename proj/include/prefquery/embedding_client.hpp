#pragma once

// Eigen before httplib: <resolv.h> defines an _res macro that collides with Eigen.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefquery/digest.hpp"
#include "prefquery/error.hpp"
#include "prefquery/text_graph.hpp"

namespace prefquery {

inline constexpr const char* kEmbedUrlEnv = "PREFQUERY_EMBED_URL";

struct EndpointDescriptor {
  std::string url;  // e.g. http://localhost:9000/embed
  double timeout_seconds = 10.0;
};

// The environment variable, when set, replaces the configured URL.
inline std::optional<EndpointDescriptor> resolve_endpoint(std::optional<std::string> configured_url,
                                                          double timeout_seconds = 10.0) {
  if (const char* env = std::getenv(kEmbedUrlEnv); env != nullptr && *env != '\0') {
    configured_url = env;
  }
  if (!configured_url || configured_url->empty()) return std::nullopt;
  return EndpointDescriptor{*configured_url, timeout_seconds};
}

// Text-hash keyed embedding store backed by a JSON-lines file. Each line is
// {"hash": <hex sha256 of text>, "dim": <int>, "values": [...]}.
// Reads and writes are serialized by an internal mutex.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;

  explicit EmbeddingCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(*path_);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        auto rec = nlohmann::json::parse(line);
        auto values = rec.at("values").get<std::vector<double>>();
        require(values.size() == rec.at("dim").get<std::size_t>(), ErrorKind::protocol,
                "dim field disagrees with values length");
        entries_[rec.at("hash").get<std::string>()] = std::move(values);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, path_->string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  std::optional<std::vector<double>> get(const std::string& hash) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(hash);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& hash, const std::vector<double>& values) {
    std::lock_guard lock(mutex_);
    if (!entries_.emplace(hash, values).second) return;
    if (!path_) return;
    std::ofstream out(*path_, std::ios::app);
    require(static_cast<bool>(out), ErrorKind::io, "cannot append to " + path_->string());
    nlohmann::json rec{{"hash", hash}, {"dim", values.size()}, {"values", values}};
    out << rec.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::vector<double>> entries_;
};

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, ErrorKind::validation,
          "embedding endpoint '" + url + "' lacks a scheme");
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// Requests embeddings for cache misses from an HTTP service and returns one
// vector per input text. Wire format: POST {"texts": [...]} answered by
// {"embeddings": [[...], ...]} in the same order.
inline std::vector<EmbeddingVector> fetch_embeddings(std::span<const std::string> texts,
                                                     const EndpointDescriptor& endpoint,
                                                     EmbeddingCache& cache) {
  require(!texts.empty(), ErrorKind::validation, "fetch_embeddings needs at least one text");
  std::vector<std::string> hashes;
  hashes.reserve(texts.size());
  std::vector<std::string> missing;
  std::vector<std::string> missing_hashes;
  for (const auto& t : texts) {
    hashes.push_back(sha256_hex(t));
    if (!cache.get(hashes.back()) &&
        std::find(missing_hashes.begin(), missing_hashes.end(), hashes.back()) ==
            missing_hashes.end()) {
      missing.push_back(t);
      missing_hashes.push_back(hashes.back());
    }
  }

  if (!missing.empty()) {
    auto url = detail::split_url(endpoint.url);
    httplib::Client client(url.origin);
    auto seconds = static_cast<time_t>(endpoint.timeout_seconds);
    auto usec = static_cast<time_t>((endpoint.timeout_seconds - static_cast<double>(seconds)) * 1e6);
    client.set_connection_timeout(seconds, usec);
    client.set_read_timeout(seconds, usec);
    nlohmann::json body{{"texts", missing}};
    auto res = client.Post(url.path, body.dump(), "application/json");
    if (!res) {
      fail(ErrorKind::retryable,
           "embedding request to " + endpoint.url + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status >= 500 || res->status == 429) {
      fail(ErrorKind::retryable, "embedding service returned HTTP " + std::to_string(res->status));
    }
    require(res->status == 200, ErrorKind::protocol,
            "embedding service returned HTTP " + std::to_string(res->status));
    std::vector<std::vector<double>> vectors;
    try {
      vectors = nlohmann::json::parse(res->body).at("embeddings").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::protocol, std::string("malformed embedding response: ") + e.what());
    }
    require(vectors.size() == missing.size(), ErrorKind::protocol,
            "embedding service returned " + std::to_string(vectors.size()) + " vectors for " +
                std::to_string(missing.size()) + " texts");
    for (const auto& v : vectors) {
      require(!v.empty() && v.size() == vectors.front().size(), ErrorKind::protocol,
              "embedding dimensions disagree within one response");
    }
    for (std::size_t i = 0; i < vectors.size(); ++i) cache.put(missing_hashes[i], vectors[i]);
  }

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& h : hashes) {
    out.push_back({*cache.get(h), {}});
    require(out.back().dim() == out.front().dim(), ErrorKind::protocol,
            "embedding dimensions disagree across the batch");
  }
  return out;
}

// Embedder backed by an external service plus the mandatory cache.
class ServiceEmbedder final : public Embedder {
 public:
  ServiceEmbedder(EndpointDescriptor endpoint, std::size_t dim, EmbeddingCache& cache)
      : endpoint_(std::move(endpoint)), dim_(dim), cache_(&cache) {}

  std::size_t dim() const override { return dim_; }
  std::string identifier() const override { return "service:" + endpoint_.url; }

  std::vector<double> embed(std::string_view text) const override {
    if (text.empty()) return std::vector<double>(dim_, 0.0);
    std::string owned(text);
    auto v = fetch_embeddings(std::span<const std::string>(&owned, 1), endpoint_, *cache_);
    require(v.front().dim() == dim_, ErrorKind::protocol,
            "service embedding dimension " + std::to_string(v.front().dim()) +
                " differs from configured " + std::to_string(dim_));
    return std::move(v.front().values);
  }

 private:
  EndpointDescriptor endpoint_;
  std::size_t dim_;
  EmbeddingCache* cache_;
};

}  // namespace prefquery
