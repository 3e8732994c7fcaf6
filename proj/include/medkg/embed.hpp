#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medkg/ontology.hpp"

namespace medkg {

// Which pieces of context the prompt for a concept carries. `full` is
// task + system + code + description + ancestor chain; the others drop or
// replace parts of that (noise swaps the description for an off-topic
// sentence).
enum class PromptVariant { full, no_task, no_parent, concept_only, code_only, noise };

const char* prompt_variant_name(PromptVariant v);  // CLI spelling, e.g. "no-task"
std::optional<PromptVariant> parse_prompt_variant(std::string_view name);

inline constexpr const char* kPromptTemplateVersion = "v1";

struct PromptRecord {
  ConceptId id;
  std::string prompt_text;
  std::string template_version;  // template revision + variant, e.g. "v1.full"
  std::string task_name;
};

// Deterministic single-line prompt for the node at (level, idx). Level-1
// concepts are framed as general concepts; deeper ones list their ancestor
// chain nearest-first with descriptions, subject to the variant.
PromptRecord build_prompt(const Ontology& ont, int level, int idx,
                          const std::string& task_name, PromptVariant variant);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;  // part of every cache key
  // Returns exactly d values; deterministic for a fixed provider configuration.
  virtual Eigen::VectorXd embed(const std::string& prompt_text, int d) = 0;
};

// Offline provider: each lowercased alphanumeric token of the prompt is
// hashed to a seeded gaussian vector and the token vectors are summed, so
// prompts sharing tokens (ancestor chains, shared description words) come
// out correlated. Output is unit-normalized.
class MockProvider : public EmbeddingProvider {
 public:
  explicit MockProvider(std::uint64_t seed = 0) : seed_(seed) {}
  std::string id() const override;
  Eigen::VectorXd embed(const std::string& prompt_text, int d) override;

 private:
  std::uint64_t seed_;
};

using CacheKey = std::array<unsigned char, 32>;

// Append-only on-disk vector store addressed by sha-256 of
// (provider id, width, prompt text). Records are hash(32B) | width(4B LE) |
// float64xwidth (LE); a human-readable sidecar lists one line per record.
// Loading tolerates a corrupt tail by truncating to the last intact record.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path file);

  static CacheKey key_for(const std::string& provider_id, int d,
                          const std::string& prompt_text);

  bool contains(const CacheKey& key) const { return entries_.count(key) > 0; }
  std::optional<Eigen::VectorXd> get(const CacheKey& key) const;
  void put(const CacheKey& key, const Eigen::VectorXd& vec, const std::string& note);

  std::size_t size() const { return entries_.size(); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path sidecar_path() const;
  bool recovered_from_corruption() const { return recovered_; }

 private:
  void load();

  std::filesystem::path path_;
  std::map<CacheKey, Eigen::VectorXd> entries_;
  bool recovered_ = false;
};

struct HttpResponse {
  int status = 0;  // 0 = network-level failure, error text in body
  std::string body;
};

// Seam between the remote provider and the wire; tests inject fakes here.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& json_body,
                            const std::vector<std::pair<std::string, std::string>>& headers) = 0;
};

// Talks to an embeddings endpoint over TLS (base_url + path).
std::unique_ptr<HttpTransport> make_https_transport(const std::string& base_url,
                                                    const std::string& path);

struct RemoteConfig {
  std::string base_url;                    // e.g. https://api.example.com
  std::string path = "/v1/embeddings";
  std::string model;                       // provider-side model name
  std::string api_key_env = "EMBED_API_KEY";  // credentials come only from here
  bool request_dimensions = true;          // ask the provider for width d directly
  bool allow_projection = false;           // fixed-width providers: seeded projection to d
  std::uint64_t projection_seed = 0;
  int max_attempts = 5;
  int backoff_initial_ms = 250;
  double backoff_factor = 2.0;
};

// Cache identity of a remote provider configured for `model`; equals what
// RemoteProvider::id() returns, usable without constructing a transport.
std::string remote_provider_id(const std::string& model);

// Remote provider with bounded retries and exponential backoff on transient
// failures (network errors, 408/429/5xx). Auth and dimension problems fail
// fast. The sleeper is injectable so tests run without waiting.
class RemoteProvider : public EmbeddingProvider {
 public:
  RemoteProvider(RemoteConfig cfg, std::unique_ptr<HttpTransport> transport = nullptr,
                 std::function<void(int)> sleep_ms = {});

  std::string id() const override;
  Eigen::VectorXd embed(const std::string& prompt_text, int d) override;

  int retries() const { return retries_; }
  void set_logger(std::function<void(const std::string&)> log) { log_ = std::move(log); }

 private:
  RemoteConfig cfg_;
  std::unique_ptr<HttpTransport> transport_;
  std::function<void(int)> sleep_ms_;
  std::function<void(const std::string&)> log_;
  int retries_ = 0;
};

struct FillStats {
  int nodes = 0;
  int hits = 0;
  int stores = 0;
  int failures = 0;
  std::string first_error;
};

// Ensures every node of every level has a cached vector: builds the prompt,
// checks the cache, and embeds on miss. Per-node provider failures are
// counted rather than aborting the sweep.
FillStats fill_cache(const OntologySet& onts, EmbeddingProvider& provider,
                     EmbeddingCache& cache, const std::string& task_name,
                     PromptVariant variant, int d);

// Cached vectors as one matrix per level (rows in unified node order).
// Throws DataError naming the first node whose vector is missing.
std::vector<Eigen::MatrixXd> collect_embeddings(const OntologySet& onts,
                                                const EmbeddingCache& cache,
                                                const std::string& provider_id,
                                                const std::string& task_name,
                                                PromptVariant variant, int d);

}  // namespace medkg
