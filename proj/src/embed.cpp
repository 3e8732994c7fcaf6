#include "medkg/embed.hpp"

#include <bit>
#include <cctype>
#include <chrono>
#include <cstring>
#include <fstream>
#include <random>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "medkg/common.hpp"

namespace medkg {

namespace {

// deliberately off-topic filler for the noise variant
constexpr const char* kNoiseSentence =
    "The regional rail timetable lists four additional evening departures on weekends.";

std::string join_ancestors(const Ontology& ont, int level, int idx) {
  std::string out;
  int cur_level = level;
  int cur = ont.node(level, idx).parent;
  while (cur >= 0) {
    --cur_level;
    const OntologyNode& n = ont.node(cur_level, cur);
    if (!out.empty()) out += ", ";
    out += n.code + " (" + n.description + ")";
    cur = n.parent;
  }
  return out;
}

}  // namespace

const char* prompt_variant_name(PromptVariant v) {
  switch (v) {
    case PromptVariant::full: return "full";
    case PromptVariant::no_task: return "no-task";
    case PromptVariant::no_parent: return "no-parent";
    case PromptVariant::concept_only: return "concept";
    case PromptVariant::code_only: return "code";
    case PromptVariant::noise: return "noise";
  }
  return "full";
}

std::optional<PromptVariant> parse_prompt_variant(std::string_view name) {
  if (name == "full") return PromptVariant::full;
  if (name == "no-task") return PromptVariant::no_task;
  if (name == "no-parent") return PromptVariant::no_parent;
  if (name == "concept") return PromptVariant::concept_only;
  if (name == "code") return PromptVariant::code_only;
  if (name == "noise") return PromptVariant::noise;
  return std::nullopt;
}

PromptRecord build_prompt(const Ontology& ont, int level, int idx,
                          const std::string& task_name, PromptVariant variant) {
  const OntologyNode& node = ont.node(level, idx);  // validates level/idx
  bool with_task = variant == PromptVariant::full || variant == PromptVariant::no_parent;
  bool with_concept = variant == PromptVariant::full || variant == PromptVariant::no_task ||
                      variant == PromptVariant::no_parent ||
                      variant == PromptVariant::concept_only;
  bool with_parents = variant == PromptVariant::full || variant == PromptVariant::no_task;

  std::string text;
  if (with_task)
    text = "For the task of " + task_name + ", provide a semantic representation for ";
  else
    text = "Provide a semantic representation for ";
  text += ont.system_label + " code " + node.code;
  if (with_concept) {
    text += " which represents " + node.description;
    if (level == 1) text += ", a general medical concept";
  }
  text += ".";
  if (with_parents && level > 1) {
    std::string chain = join_ancestors(ont, level, idx);
    if (!chain.empty())
      text += " It falls under the broader " + ont.system_label + " categories of " + chain + ".";
  }
  if (variant == PromptVariant::noise) text += std::string(" ") + kNoiseSentence;

  PromptRecord rec;
  rec.id = ont.id_of(level, idx);
  rec.prompt_text = std::move(text);
  rec.template_version = std::string(kPromptTemplateVersion) + "." + prompt_variant_name(variant);
  rec.task_name = task_name;
  return rec;
}

std::string MockProvider::id() const { return "mock-v1:" + std::to_string(seed_); }

Eigen::VectorXd MockProvider::embed(const std::string& prompt_text, int d) {
  if (d < 1) throw ConfigError("embedding width must be at least 1");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    std::mt19937_64 g(substream_seed(seed_, "tok:" + token));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < d; ++i) v[i] += gauss(g);
    token.clear();
  };
  for (char ch : prompt_text) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      token += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    else
      flush();
  }
  flush();
  double norm = v.norm();
  if (norm < 1e-12) {
    // token-free prompt: fall back to hashing the raw text
    std::mt19937_64 g(substream_seed(seed_, "raw:" + prompt_text));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < d; ++i) v[i] = gauss(g);
    norm = v.norm();
  }
  return v / norm;
}

CacheKey EmbeddingCache::key_for(const std::string& provider_id, int d,
                                 const std::string& prompt_text) {
  std::string material = provider_id + "\n" + std::to_string(d) + "\n" + prompt_text;
  return sha256_bytes(material);
}

EmbeddingCache::EmbeddingCache(std::filesystem::path file) : path_(std::move(file)) { load(); }

std::filesystem::path EmbeddingCache::sidecar_path() const {
  std::filesystem::path p = path_;
  p += ".index.txt";
  return p;
}

namespace {

void append_u32_le(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr std::uint32_t kMaxWidth = 1u << 20;

}  // namespace

void EmbeddingCache::load() {
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;  // fresh cache
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0, good_end = 0;
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
  while (pos + 36 <= raw.size()) {
    std::uint32_t width = read_u32_le(bytes + pos + 32);
    if (width == 0 || width > kMaxWidth) break;  // unreadable record
    std::size_t need = 36 + static_cast<std::size_t>(width) * 8;
    if (pos + need > raw.size()) break;  // truncated tail
    CacheKey key;
    std::memcpy(key.data(), bytes + pos, 32);
    Eigen::VectorXd vec(width);
    for (std::uint32_t i = 0; i < width; ++i) {
      std::uint64_t u = 0;
      for (int b = 7; b >= 0; --b) u = (u << 8) | bytes[pos + 36 + i * 8 + b];
      vec[i] = std::bit_cast<double>(u);
    }
    entries_[key] = std::move(vec);
    pos += need;
    good_end = pos;
  }
  if (good_end < raw.size()) {
    recovered_ = true;
    std::filesystem::resize_file(path_, good_end);
  }
}

std::optional<Eigen::VectorXd> EmbeddingCache::get(const CacheKey& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::put(const CacheKey& key, const Eigen::VectorXd& vec,
                         const std::string& note) {
  if (vec.size() < 1) throw ConfigError("cache refuses empty vectors");
  std::string buf(reinterpret_cast<const char*>(key.data()), key.size());
  append_u32_le(buf, static_cast<std::uint32_t>(vec.size()));
  for (Eigen::Index i = 0; i < vec.size(); ++i) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(vec[i]);
    for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
  }
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot open cache file for append: " + path_.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw DataError("short write to cache file: " + path_.string());

  std::string clean = note;  // keep tabs: the note carries its own fields
  for (char& ch : clean)
    if (ch == '\n' || ch == '\r') ch = ' ';
  static const char* kHexDigits = "0123456789abcdef";
  std::string hex;
  for (unsigned char b : key) {
    hex += kHexDigits[b >> 4];
    hex += kHexDigits[b & 0xf];
  }
  std::ofstream side(sidecar_path(), std::ios::app);
  side << hex << '\t' << vec.size() << '\t' << clean << '\n';

  entries_[key] = vec;
}

namespace {

class HttplibTransport : public HttpTransport {
 public:
  HttplibTransport(std::string base_url, std::string path)
      : base_url_(std::move(base_url)), path_(std::move(path)) {}

  HttpResponse post(const std::string& json_body,
                    const std::vector<std::pair<std::string, std::string>>& headers) override {
    httplib::Client client(base_url_);
    client.set_connection_timeout(15);
    client.set_read_timeout(60);
    httplib::Headers hdrs;
    for (const auto& [k, v] : headers) hdrs.emplace(k, v);
    auto res = client.Post(path_, hdrs, json_body, "application/json");
    if (!res) return {0, "network error: " + httplib::to_string(res.error())};
    return {res->status, res->body};
  }

 private:
  std::string base_url_;
  std::string path_;
};

bool transient_status(int status) {
  return status == 0 || status == 408 || status == 429 || status >= 500;
}

}  // namespace

std::unique_ptr<HttpTransport> make_https_transport(const std::string& base_url,
                                                    const std::string& path) {
  return std::make_unique<HttplibTransport>(base_url, path);
}

RemoteProvider::RemoteProvider(RemoteConfig cfg, std::unique_ptr<HttpTransport> transport,
                               std::function<void(int)> sleep_ms)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleep_ms_(std::move(sleep_ms)) {
  if (!transport_) {
    if (cfg_.base_url.empty())
      throw ConfigError("remote embedding needs a base_url");
    transport_ = make_https_transport(cfg_.base_url, cfg_.path);
  }
  if (!sleep_ms_)
    sleep_ms_ = [](int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); };
  if (cfg_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
}

std::string remote_provider_id(const std::string& model) { return "remote:" + model; }

std::string RemoteProvider::id() const { return remote_provider_id(cfg_.model); }

Eigen::VectorXd RemoteProvider::embed(const std::string& prompt_text, int d) {
  if (d < 1) throw ConfigError("embedding width must be at least 1");
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (key == nullptr || *key == '\0')
    throw ConfigError("remote embedding credentials missing: set the " + cfg_.api_key_env +
                      " environment variable");

  nlohmann::json req{{"model", cfg_.model}, {"input", prompt_text}};
  if (cfg_.request_dimensions) req["dimensions"] = d;
  std::string body = req.dump();
  std::vector<std::pair<std::string, std::string>> headers{
      {"Authorization", std::string("Bearer ") + key}};

  int delay = cfg_.backoff_initial_ms;
  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
    HttpResponse resp = transport_->post(body, headers);
    if (resp.status == 200) {
      nlohmann::json parsed;
      try {
        parsed = nlohmann::json::parse(resp.body);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("embedding response is not valid json: ") + e.what());
      }
      if (!parsed.contains("data") || !parsed["data"].is_array() || parsed["data"].empty() ||
          !parsed["data"][0].contains("embedding"))
        throw DataError("embedding response missing data[0].embedding");
      const auto& arr = parsed["data"][0]["embedding"];
      Eigen::VectorXd vec(static_cast<Eigen::Index>(arr.size()));
      for (std::size_t i = 0; i < arr.size(); ++i) vec[static_cast<Eigen::Index>(i)] = arr[i];
      if (vec.size() == d) return vec;
      if (!cfg_.allow_projection)
        throw ConfigError("provider returned width " + std::to_string(vec.size()) +
                          ", expected " + std::to_string(d) +
                          " (enable projection for fixed-width providers)");
      // seeded gaussian projection to the requested width
      std::mt19937_64 g(substream_seed(cfg_.projection_seed,
                                       "proj:" + std::to_string(vec.size()) + "->" +
                                           std::to_string(d)));
      std::normal_distribution<double> gauss(0.0, 1.0);
      Eigen::MatrixXd proj(d, vec.size());
      for (Eigen::Index r = 0; r < proj.rows(); ++r)
        for (Eigen::Index c = 0; c < proj.cols(); ++c) proj(r, c) = gauss(g);
      return (proj * vec) / std::sqrt(static_cast<double>(d));
    }
    if (resp.status == 401 || resp.status == 403)
      throw ConfigError("embedding endpoint rejected credentials (HTTP " +
                        std::to_string(resp.status) + ")");
    if (!transient_status(resp.status))
      throw DataError("embedding endpoint rejected the request (HTTP " +
                      std::to_string(resp.status) + "): " + resp.body.substr(0, 200));
    last_error = resp.status == 0 ? resp.body
                                  : "HTTP " + std::to_string(resp.status) + ": " +
                                        resp.body.substr(0, 200);
    if (attempt < cfg_.max_attempts) {
      ++retries_;
      if (log_)
        log_("retry " + std::to_string(attempt) + " after transient failure: " + last_error);
      sleep_ms_(delay);
      delay = static_cast<int>(delay * cfg_.backoff_factor);
    }
  }
  throw DataError("embedding request failed after " + std::to_string(cfg_.max_attempts) +
                  " attempts; last error: " + last_error);
}

FillStats fill_cache(const OntologySet& onts, EmbeddingProvider& provider,
                     EmbeddingCache& cache, const std::string& task_name,
                     PromptVariant variant, int d) {
  FillStats stats;
  std::string provider_id = provider.id();
  for (int level = 1; level <= onts.depth(); ++level) {
    for (int uid = 0; uid < onts.level_count(level); ++uid) {
      const OntologySet::NodeRef& ref = onts.node_ref(level, uid);
      PromptRecord rec =
          build_prompt(onts.ontology(ref.ont), level, ref.idx, task_name, variant);
      CacheKey key = EmbeddingCache::key_for(provider_id, d, rec.prompt_text);
      ++stats.nodes;
      if (cache.contains(key)) {
        ++stats.hits;
        continue;
      }
      try {
        Eigen::VectorXd vec = provider.embed(rec.prompt_text, d);
        if (vec.size() != d)
          throw DataError("provider returned width " + std::to_string(vec.size()) +
                          ", expected " + std::to_string(d));
        cache.put(key, vec,
                  provider_id + "\t" + rec.template_version + "\t" + rec.task_name + "\t" +
                      rec.prompt_text);
        ++stats.stores;
      } catch (const std::exception& e) {
        ++stats.failures;
        if (stats.first_error.empty()) stats.first_error = e.what();
      }
    }
  }
  return stats;
}

std::vector<Eigen::MatrixXd> collect_embeddings(const OntologySet& onts,
                                                const EmbeddingCache& cache,
                                                const std::string& provider_id,
                                                const std::string& task_name,
                                                PromptVariant variant, int d) {
  std::vector<Eigen::MatrixXd> levels;
  levels.reserve(static_cast<std::size_t>(onts.depth()));
  for (int level = 1; level <= onts.depth(); ++level) {
    Eigen::MatrixXd mat(onts.level_count(level), d);
    for (int uid = 0; uid < onts.level_count(level); ++uid) {
      const OntologySet::NodeRef& ref = onts.node_ref(level, uid);
      PromptRecord rec =
          build_prompt(onts.ontology(ref.ont), level, ref.idx, task_name, variant);
      CacheKey key = EmbeddingCache::key_for(provider_id, d, rec.prompt_text);
      auto vec = cache.get(key);
      if (!vec)
        throw DataError("no cached embedding for " + onts.ontology(ref.ont).system_label +
                        " code " + onts.node(level, uid).code + " at level " +
                        std::to_string(level) + "; run init-embeddings first");
      mat.row(uid) = vec->transpose();
    }
    levels.push_back(std::move(mat));
  }
  return levels;
}

}  // namespace medkg
