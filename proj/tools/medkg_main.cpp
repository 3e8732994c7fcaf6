// Command-line front end for the concept-representation pipeline. Every
// subcommand reads and writes artifacts inside one workspace directory and
// records a manifest (resolved config, input hashes, outputs), so re-running
// with an unchanged identity is a no-op and every reported number traces back
// to a seed and a config hash. Exit codes: 0 success, 2 configuration error,
// 3 data/artifact error, 4 numerical failure (including diverged training).

#include <CLI11.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <locale>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "medkg/checkpoint.hpp"
#include "medkg/cohort.hpp"
#include "medkg/common.hpp"
#include "medkg/embed.hpp"
#include "medkg/encoder.hpp"
#include "medkg/metakg.hpp"
#include "medkg/metrics.hpp"
#include "medkg/ontology.hpp"
#include "medkg/predictor.hpp"
#include "medkg/runconfig.hpp"
#include "medkg/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace medkg;

namespace {

constexpr const char* kVersion = "1";

// ---------------------------------------------------------------------------
// Configuration schema: every key the tool understands, with its default.
// ---------------------------------------------------------------------------

KvConfig default_config() {
  KvConfig kv;
  kv.set("seed", "1");
  kv.set("seeds", "");  // empty = derive a single-seed list from `seed`

  kv.set("cohort.patients", "750");
  kv.set("cohort.clusters", "10");
  kv.set("cohort.strength", "0.9");
  kv.set("cohort.parent_alignment", "0.9");
  kv.set("cohort.family_strength", "0.7");
  kv.set("cohort.min_visits", "2");
  kv.set("cohort.max_visits", "4");
  kv.set("cohort.dx_per_visit", "2.9");
  kv.set("cohort.rx_per_visit", "7.0");
  kv.set("cohort.px_per_visit", "0.7");
  kv.set("cohort.dx_leaves", "120");
  kv.set("cohort.rx_leaves", "60");
  kv.set("cohort.px_leaves", "40");
  kv.set("cohort.dx_parents", "24");
  kv.set("cohort.rx_parents", "12");
  kv.set("cohort.px_parents", "8");
  kv.set("cohort.dx_roots", "6");
  kv.set("cohort.rx_roots", "3");
  kv.set("cohort.px_roots", "2");

  kv.set("metakg.tau", "0.01");

  kv.set("model.d", "32");

  kv.set("embed.provider", "mock");
  kv.set("embed.task", "next-visit diagnosis prediction");
  kv.set("embed.variant", "full");
  kv.set("embed.mock_seed", "0");
  kv.set("embed.remote.base_url", "");
  kv.set("embed.remote.path", "/v1/embeddings");
  kv.set("embed.remote.model", "");
  kv.set("embed.remote.api_key_env", "EMBED_API_KEY");
  kv.set("embed.remote.request_dimensions", "true");
  kv.set("embed.remote.allow_projection", "false");
  kv.set("embed.remote.projection_seed", "0");
  kv.set("embed.remote.max_attempts", "5");

  kv.set("encoder.horizontal_heads", "2");
  kv.set("encoder.vertical_heads", "2");
  kv.set("encoder.horizontal_dropout", "0.1");
  kv.set("encoder.vertical_dropout", "0.1");
  kv.set("encoder.horizontal_rounds", "1");
  kv.set("encoder.leaf_horizontal", "true");
  kv.set("encoder.parent_horizontal", "true");
  kv.set("encoder.vertical", "true");
  kv.set("encoder.llm_init", "true");
  kv.set("encoder.leaf_uses_hypergraph", "true");
  kv.set("encoder.carry_children", "false");
  kv.set("encoder.attend_incoming", "false");
  kv.set("encoder.mix_pre_vertical", "false");

  kv.set("predictor.blocks", "1");
  kv.set("predictor.ffn_width", "64");
  kv.set("predictor.dropout", "0.1");
  kv.set("predictor.max_visits", "16");

  kv.set("train.lr", "0.001");
  kv.set("train.batch_size", "64");
  kv.set("train.max_epochs", "30");
  kv.set("train.patience", "5");
  kv.set("train.folds", "5");
  kv.set("train.fold", "0");
  kv.set("train.fraction", "1.0");

  kv.set("sweep.fractions", "0.2 0.4 0.6 0.8 1.0");
  return kv;
}

std::vector<std::string> known_keys() {
  KvConfig defaults = default_config();  // keep alive while iterating entries()
  std::vector<std::string> keys;
  for (const auto& [k, v] : defaults.entries()) keys.push_back(k);
  return keys;
}

// ---------------------------------------------------------------------------
// Workspace layout
// ---------------------------------------------------------------------------

constexpr std::array<const char*, 3> kSystemNames{"dx", "rx", "px"};
constexpr std::array<ConceptType, 3> kSystemTypes{ConceptType::dx, ConceptType::rx,
                                                  ConceptType::px};

struct Workspace {
  fs::path dir;

  fs::path ontology_csv(int s) const {
    return dir / ("ontology." + std::string(kSystemNames[static_cast<std::size_t>(s)]) + ".csv");
  }
  fs::path labels_file() const { return dir / "ontology.labels.txt"; }
  fs::path cohort_tsv() const { return dir / "cohort.tsv"; }
  fs::path graph_dir() const { return dir / "graph"; }
  fs::path cache_file() const { return dir / "embeddings.cache"; }
  fs::path checkpoint_file(std::uint64_t seed) const {
    return dir / ("checkpoint.seed" + std::to_string(seed) + ".bin");
  }
  fs::path report_txt() const { return dir / "report.txt"; }
  fs::path trace_txt() const { return dir / "trace.txt"; }
  fs::path report_eval_txt() const { return dir / "report.eval.txt"; }
  fs::path ablate_txt() const { return dir / "ablate.txt"; }
  fs::path sweep_txt() const { return dir / "sweep.txt"; }
  fs::path manifest(const std::string& cmd) const { return dir / ("manifest." + cmd + ".json"); }
};

std::string fmt6(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Manifests: identity = command + version + resolved config subset + input
// hashes. A command is skipped when the stored identity matches, the previous
// run succeeded, and its outputs are still present.
// ---------------------------------------------------------------------------

std::map<std::string, std::string> config_subset(const KvConfig& kv,
                                                 const std::vector<std::string>& selectors) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : kv.entries()) {
    for (const auto& sel : selectors) {
      bool match = !sel.empty() && sel.back() == '.' ? k.rfind(sel, 0) == 0 : k == sel;
      if (match) {
        out[k] = v;
        break;
      }
    }
  }
  return out;
}

std::string hash_of_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
    return a.lexically_relative(dir).generic_string() < b.lexically_relative(dir).generic_string();
  });
  std::string acc;
  for (const auto& p : files) {
    acc += p.lexically_relative(dir).generic_string();
    acc += '\n';
    acc += sha256_file_hex(p.string());
    acc += '\n';
  }
  return sha256_hex(acc);
}

json make_identity(const std::string& cmd, const std::map<std::string, std::string>& cfg,
                   const std::map<std::string, std::string>& inputs) {
  std::string canonical;
  for (const auto& [k, v] : cfg) canonical += k + " = " + v + "\n";
  json j;
  j["command"] = cmd;
  j["version"] = kVersion;
  j["config"] = cfg;
  j["config_hash"] = sha256_hex(canonical);
  j["inputs"] = inputs;
  return j;
}

bool output_present(const fs::path& p) {
  // A graph directory only counts once its self-describing header landed.
  if (fs::is_directory(p)) return fs::exists(p / "meta.txt");
  return fs::exists(p);
}

bool manifest_matches(const fs::path& manifest_path, const json& identity,
                      const std::vector<fs::path>& outputs) {
  if (!fs::exists(manifest_path)) return false;
  json old;
  try {
    old = json::parse(read_text_file(manifest_path.string()));
  } catch (...) {
    return false;
  }
  for (const char* k : {"command", "version", "config", "inputs"})
    if (!old.contains(k) || old[k] != identity[k]) return false;
  if (old.value("status", std::string()) != "ok") return false;
  for (const auto& p : outputs)
    if (!output_present(p)) return false;
  return true;
}

void write_manifest(const fs::path& path, json identity, const std::vector<fs::path>& outputs,
                    const std::string& status, const json& extra = json::object()) {
  json out_hashes = json::object();
  for (const auto& p : outputs)
    out_hashes[p.filename().string()] =
        fs::is_directory(p) ? hash_of_dir(p) : sha256_file_hex(p.string());
  identity["outputs"] = out_hashes;
  identity["status"] = status;
  for (const auto& [k, v] : extra.items()) identity[k] = v;
  write_text_file(path.string(), identity.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Typed views of the resolved configuration
// ---------------------------------------------------------------------------

SynthConfig synth_from(const KvConfig& kv) {
  SynthConfig c;
  c.patients = kv.get_int("cohort.patients", c.patients);
  c.clusters = kv.get_int("cohort.clusters", c.clusters);
  c.strength = kv.get_double("cohort.strength", c.strength);
  c.parent_alignment = kv.get_double("cohort.parent_alignment", c.parent_alignment);
  c.family_strength = kv.get_double("cohort.family_strength", c.family_strength);
  c.min_visits = kv.get_int("cohort.min_visits", c.min_visits);
  c.max_visits = kv.get_int("cohort.max_visits", c.max_visits);
  c.dx_per_visit = kv.get_double("cohort.dx_per_visit", c.dx_per_visit);
  c.rx_per_visit = kv.get_double("cohort.rx_per_visit", c.rx_per_visit);
  c.px_per_visit = kv.get_double("cohort.px_per_visit", c.px_per_visit);
  c.dx_leaves = kv.get_int("cohort.dx_leaves", c.dx_leaves);
  c.rx_leaves = kv.get_int("cohort.rx_leaves", c.rx_leaves);
  c.px_leaves = kv.get_int("cohort.px_leaves", c.px_leaves);
  c.dx_parents = kv.get_int("cohort.dx_parents", c.dx_parents);
  c.rx_parents = kv.get_int("cohort.rx_parents", c.rx_parents);
  c.px_parents = kv.get_int("cohort.px_parents", c.px_parents);
  c.dx_roots = kv.get_int("cohort.dx_roots", c.dx_roots);
  c.rx_roots = kv.get_int("cohort.rx_roots", c.rx_roots);
  c.px_roots = kv.get_int("cohort.px_roots", c.px_roots);
  c.seed = kv.get_u64("seed", c.seed);
  return c;
}

PromptVariant variant_from(const KvConfig& kv) {
  std::string name = kv.get_str("embed.variant", "full");
  auto v = parse_prompt_variant(name);
  if (!v)
    throw ConfigError("embed.variant '" + name +
                      "' is not one of full, no-task, no-parent, concept, code, noise");
  return *v;
}

EncoderConfig encoder_from(const KvConfig& kv) {
  EncoderConfig c;
  c.d = kv.get_int("model.d", 32);
  c.horizontal_heads = kv.get_int("encoder.horizontal_heads", c.horizontal_heads);
  c.vertical_heads = kv.get_int("encoder.vertical_heads", c.vertical_heads);
  c.horizontal_dropout = kv.get_double("encoder.horizontal_dropout", c.horizontal_dropout);
  c.vertical_dropout = kv.get_double("encoder.vertical_dropout", c.vertical_dropout);
  c.horizontal_rounds = kv.get_int("encoder.horizontal_rounds", c.horizontal_rounds);
  c.leaf_horizontal = kv.get_bool("encoder.leaf_horizontal", c.leaf_horizontal);
  c.parent_horizontal = kv.get_bool("encoder.parent_horizontal", c.parent_horizontal);
  c.vertical = kv.get_bool("encoder.vertical", c.vertical);
  c.llm_init = kv.get_bool("encoder.llm_init", c.llm_init);
  c.leaf_uses_hypergraph = kv.get_bool("encoder.leaf_uses_hypergraph", c.leaf_uses_hypergraph);
  c.carry_children = kv.get_bool("encoder.carry_children", c.carry_children);
  c.attend_incoming = kv.get_bool("encoder.attend_incoming", c.attend_incoming);
  c.mix_pre_vertical = kv.get_bool("encoder.mix_pre_vertical", c.mix_pre_vertical);
  c.tau = kv.get_double_list("metakg.tau", c.tau);
  return c;
}

PredictorConfig predictor_from(const KvConfig& kv) {
  PredictorConfig c;
  c.d = kv.get_int("model.d", 32);
  c.blocks = kv.get_int("predictor.blocks", c.blocks);
  c.ffn_width = kv.get_int("predictor.ffn_width", c.ffn_width);
  c.dropout = kv.get_double("predictor.dropout", c.dropout);
  c.max_visits = kv.get_int("predictor.max_visits", c.max_visits);
  return c;
}

TrainConfig train_from(const KvConfig& kv) {
  TrainConfig c;
  c.encoder = encoder_from(kv);
  c.predictor = predictor_from(kv);
  c.lr = kv.get_double("train.lr", c.lr);
  c.batch_size = kv.get_int("train.batch_size", c.batch_size);
  c.max_epochs = kv.get_int("train.max_epochs", c.max_epochs);
  c.patience = kv.get_int("train.patience", c.patience);
  c.folds = kv.get_int("train.folds", c.folds);
  c.fold = kv.get_int("train.fold", c.fold);
  c.train_fraction = kv.get_double("train.fraction", c.train_fraction);
  return c;
}

std::unique_ptr<EmbeddingProvider> provider_from(const KvConfig& kv) {
  std::string p = kv.get_str("embed.provider", "mock");
  if (p == "mock") return std::make_unique<MockProvider>(kv.get_u64("embed.mock_seed", 0));
  if (p == "remote") {
    RemoteConfig rc;
    rc.base_url = kv.get_str("embed.remote.base_url", "");
    rc.path = kv.get_str("embed.remote.path", rc.path);
    rc.model = kv.get_str("embed.remote.model", "");
    rc.api_key_env = kv.get_str("embed.remote.api_key_env", rc.api_key_env);
    rc.request_dimensions = kv.get_bool("embed.remote.request_dimensions", rc.request_dimensions);
    rc.allow_projection = kv.get_bool("embed.remote.allow_projection", rc.allow_projection);
    rc.projection_seed = kv.get_u64("embed.remote.projection_seed", rc.projection_seed);
    rc.max_attempts = kv.get_int("embed.remote.max_attempts", rc.max_attempts);
    if (rc.model.empty())
      throw ConfigError("embed.remote.model must be set for the remote provider");
    return std::make_unique<RemoteProvider>(std::move(rc));
  }
  throw ConfigError("embed.provider must be 'mock' or 'remote', got '" + p + "'");
}

// The provider identity baked into cache keys, derivable without a transport.
std::string provider_id_from(const KvConfig& kv) {
  std::string p = kv.get_str("embed.provider", "mock");
  if (p == "mock") return MockProvider(kv.get_u64("embed.mock_seed", 0)).id();
  if (p == "remote") return remote_provider_id(kv.get_str("embed.remote.model", ""));
  throw ConfigError("embed.provider must be 'mock' or 'remote', got '" + p + "'");
}

// ---------------------------------------------------------------------------
// Shared artifact loading
// ---------------------------------------------------------------------------

OntologySet load_workspace_onts(const Workspace& ws) {
  std::map<std::string, std::string> labels;
  if (fs::exists(ws.labels_file())) {
    std::istringstream in(read_text_file(ws.labels_file().string()));
    std::string line;
    while (std::getline(in, line)) {
      auto tab = line.find('\t');
      if (tab != std::string::npos) labels[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }
  std::vector<Ontology> onts;
  for (int s = 0; s < 3; ++s) {
    fs::path p = ws.ontology_csv(s);
    if (!fs::exists(p))
      throw DataError("ontology file " + p.string() + " not found; run gen-cohort first");
    auto it = labels.find(kSystemNames[static_cast<std::size_t>(s)]);
    std::string label = it != labels.end()
                            ? it->second
                            : default_system_label(kSystemTypes[static_cast<std::size_t>(s)]);
    onts.push_back(load_ontology(p.string(), kSystemTypes[static_cast<std::size_t>(s)], label));
  }
  return OntologySet(std::move(onts));
}

Cohort load_workspace_cohort(const Workspace& ws, const OntologySet& onts) {
  if (!fs::exists(ws.cohort_tsv()))
    throw DataError("cohort file " + ws.cohort_tsv().string() + " not found; run gen-cohort first");
  return load_cohort(ws.cohort_tsv().string(), onts);
}

MetaKG load_workspace_graph(const Workspace& ws, const OntologySet& onts) {
  if (!fs::exists(ws.graph_dir() / "meta.txt"))
    throw DataError("graph directory " + ws.graph_dir().string() +
                    " not built; run build-metakg first");
  return import_metakg(ws.graph_dir().string(), onts);
}

// Hashes of the artifacts a command consumes, for its manifest identity.
std::map<std::string, std::string> data_input_hashes(const Workspace& ws, bool with_cohort,
                                                     bool with_graph) {
  std::map<std::string, std::string> inputs;
  for (int s = 0; s < 3; ++s) {
    fs::path p = ws.ontology_csv(s);
    if (!fs::exists(p))
      throw DataError("ontology file " + p.string() + " not found; run gen-cohort first");
    inputs[p.filename().string()] = sha256_file_hex(p.string());
  }
  if (fs::exists(ws.labels_file()))
    inputs[ws.labels_file().filename().string()] = sha256_file_hex(ws.labels_file().string());
  if (with_cohort) {
    if (!fs::exists(ws.cohort_tsv()))
      throw DataError("cohort file " + ws.cohort_tsv().string() +
                      " not found; run gen-cohort first");
    inputs["cohort.tsv"] = sha256_file_hex(ws.cohort_tsv().string());
  }
  if (with_graph) {
    if (!fs::exists(ws.graph_dir() / "meta.txt"))
      throw DataError("graph directory " + ws.graph_dir().string() +
                      " not built; run build-metakg first");
    inputs["graph"] = hash_of_dir(ws.graph_dir());
  }
  return inputs;
}

// Initial level embeddings for one training run. With language-model init the
// vectors come from the cache (same for every seed); otherwise a seeded
// uniform init specific to the run. `provenance` receives a stable digest of
// what was actually consumed.
std::vector<Matrix> init_for_run(const KvConfig& kv, const OntologySet& onts, const Workspace& ws,
                                 std::uint64_t run_seed, bool llm_init, std::string* provenance) {
  const int d = kv.get_int("model.d", 32);
  if (llm_init) {
    if (!fs::exists(ws.cache_file()))
      throw DataError("embedding cache " + ws.cache_file().string() +
                      " not found; run init-embeddings first");
    EmbeddingCache cache(ws.cache_file());
    auto z = collect_embeddings(onts, cache, provider_id_from(kv),
                                kv.get_str("embed.task", ""), variant_from(kv), d);
    if (provenance) {
      std::string acc;
      for (const auto& m : z)
        acc.append(reinterpret_cast<const char*>(m.data()),
                   sizeof(double) * static_cast<std::size_t>(m.size()));
      *provenance = sha256_hex(acc);
    }
    return z;
  }
  if (provenance) *provenance = "seeded-uniform";
  return random_level_embeddings(onts, d, substream_seed(run_seed, "init-emb"));
}

// Config keys whose values change what a training run computes.
const std::vector<std::string>& train_selectors() {
  static const std::vector<std::string> sel{
      "seeds",          "model.d",           "embed.provider", "embed.task",
      "embed.variant",  "embed.mock_seed",   "embed.remote.model",
      "encoder.",       "predictor.",        "train."};
  return sel;
}

std::vector<std::uint64_t> seeds_from(const KvConfig& kv) {
  auto seeds = kv.get_u64_list("seeds", {1});
  if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
  return seeds;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_cohort(const KvConfig& kv, const Workspace& ws, bool force) {
  json identity = make_identity("gen-cohort", config_subset(kv, {"seed", "cohort."}), {});
  std::vector<fs::path> outputs{ws.ontology_csv(0), ws.ontology_csv(1), ws.ontology_csv(2),
                                ws.labels_file(), ws.cohort_tsv()};
  if (!force && manifest_matches(ws.manifest("gen-cohort"), identity, outputs)) {
    std::cout << "gen-cohort: up to date in " << ws.dir.string() << "\n";
    return 0;
  }
  SyntheticData data = generate_synthetic(synth_from(kv));
  fs::create_directories(ws.dir);
  std::string labels;
  for (int s = 0; s < 3; ++s) {
    write_ontology_csv(data.onts.ontology(s), ws.ontology_csv(s).string());
    labels += std::string(kSystemNames[static_cast<std::size_t>(s)]) + "\t" +
              data.onts.ontology(s).system_label + "\n";
  }
  write_text_file(ws.labels_file().string(), labels);
  write_cohort(data.cohort, data.onts, ws.cohort_tsv().string());

  json extra;
  extra["patients"] = data.cohort.records.size();
  extra["visits"] = data.cohort.total_visits();
  write_manifest(ws.manifest("gen-cohort"), identity, outputs, "ok", extra);
  std::cout << "gen-cohort: " << data.cohort.records.size() << " patients, "
            << data.cohort.total_visits() << " visits -> " << ws.cohort_tsv().string() << "\n";
  return 0;
}

int cmd_build_metakg(const KvConfig& kv, const Workspace& ws, bool force) {
  auto inputs = data_input_hashes(ws, /*with_cohort=*/true, /*with_graph=*/false);
  json identity = make_identity("build-metakg", config_subset(kv, {"metakg."}), inputs);
  std::vector<fs::path> outputs{ws.graph_dir()};
  if (!force && manifest_matches(ws.manifest("build-metakg"), identity, outputs)) {
    std::cout << "build-metakg: up to date in " << ws.graph_dir().string() << "\n";
    return 0;
  }
  OntologySet onts = load_workspace_onts(ws);
  Cohort cohort = load_workspace_cohort(ws, onts);
  MetaKG kg = build_metakg(onts, cohort, kv.get_double_list("metakg.tau", {0.01}));
  export_metakg(kg, onts, ws.graph_dir().string());

  json extra;
  extra["depth"] = kg.depth;
  extra["visits"] = static_cast<int>(kg.incidence.cols());
  write_manifest(ws.manifest("build-metakg"), identity, outputs, "ok", extra);
  std::cout << "build-metakg: depth " << kg.depth << ", " << kg.incidence.cols()
            << " visit hyperedges -> " << ws.graph_dir().string() << "\n";
  return 0;
}

int cmd_init_embeddings(const KvConfig& kv, const Workspace& ws, bool force) {
  auto inputs = data_input_hashes(ws, /*with_cohort=*/false, /*with_graph=*/false);
  json identity =
      make_identity("init-embeddings", config_subset(kv, {"model.d", "embed."}), inputs);
  std::vector<fs::path> outputs{ws.cache_file()};
  if (!force && manifest_matches(ws.manifest("init-embeddings"), identity, outputs)) {
    std::cout << "init-embeddings: up to date in " << ws.cache_file().string() << "\n";
    return 0;
  }
  OntologySet onts = load_workspace_onts(ws);
  auto provider = provider_from(kv);
  EmbeddingCache cache(ws.cache_file());
  FillStats st = fill_cache(onts, *provider, cache, kv.get_str("embed.task", ""),
                            variant_from(kv), kv.get_int("model.d", 32));
  if (st.failures > 0)
    throw DataError("init-embeddings: provider failed for " + std::to_string(st.failures) +
                    " of " + std::to_string(st.nodes) + " concepts; first error: " +
                    st.first_error);

  json extra;
  extra["nodes"] = st.nodes;
  extra["cache_hits"] = st.hits;
  extra["embedded"] = st.stores;
  extra["provider_id"] = provider->id();
  write_manifest(ws.manifest("init-embeddings"), identity, outputs, "ok", extra);
  std::cout << "init-embeddings: " << st.nodes << " concepts (" << st.hits << " cached, "
            << st.stores << " embedded) -> " << ws.cache_file().string() << "\n";
  return 0;
}

// Runs training for each seed under the given resolved config; fills `report`
// and returns the per-seed results. Used by train, ablate, and sweep.
std::vector<TrainResult> run_seeds(const KvConfig& kv, const OntologySet& onts, const MetaKG& kg,
                                   const Cohort& cohort, const Workspace& ws,
                                   const std::vector<std::uint64_t>& seeds, MetricsReport* report,
                                   std::vector<ag::ParamStore>* stores, std::string* emb_hash) {
  TrainConfig base = train_from(kv);
  std::vector<Matrix> shared_init;
  if (base.encoder.llm_init)
    shared_init = init_for_run(kv, onts, ws, seeds.front(), true, emb_hash);
  else if (emb_hash)
    *emb_hash = "seeded-uniform";

  std::vector<TrainResult> results;
  for (std::uint64_t seed : seeds) {
    TrainConfig tc = base;
    tc.seed = seed;
    std::vector<Matrix> init =
        base.encoder.llm_init
            ? shared_init
            : init_for_run(kv, onts, ws, seed, false, nullptr);
    ag::ParamStore store;
    TrainResult r = train_model(onts, kg, cohort, init, tc, stores ? &store : nullptr);
    if (report) {
      report->seeds.push_back(seed);
      report->per_seed.push_back(r.test);
      report->epochs_to_best.push_back(r.epochs_to_best);
      report->diverged.push_back(r.diverged);
    }
    if (stores) stores->push_back(std::move(store));
    results.push_back(std::move(r));
  }
  return results;
}

int cmd_train(const KvConfig& kv, const Workspace& ws, bool force) {
  auto seeds = seeds_from(kv);
  TrainConfig probe = train_from(kv);
  probe.validate();

  auto inputs = data_input_hashes(ws, /*with_cohort=*/true, /*with_graph=*/true);
  OntologySet onts = load_workspace_onts(ws);
  if (probe.encoder.llm_init) {
    std::string emb_hash;
    init_for_run(kv, onts, ws, seeds.front(), true, &emb_hash);  // cheap: cache + assembly
    inputs["embeddings"] = emb_hash;
  } else {
    inputs["embeddings"] = "seeded-uniform";
  }

  json identity = make_identity("train", config_subset(kv, train_selectors()), inputs);
  std::vector<fs::path> outputs{ws.report_txt(), ws.trace_txt()};
  for (std::uint64_t s : seeds) outputs.push_back(ws.checkpoint_file(s));
  if (!force && manifest_matches(ws.manifest("train"), identity, outputs)) {
    std::cout << "train: up to date (" << ws.report_txt().string() << ")\n";
    return 0;
  }

  Cohort cohort = load_workspace_cohort(ws, onts);
  MetaKG kg = load_workspace_graph(ws, onts);

  MetricsReport report;
  std::vector<ag::ParamStore> stores;
  auto results = run_seeds(kv, onts, kg, cohort, ws, seeds, &report, &stores, nullptr);

  fs::create_directories(ws.dir);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    save_checkpoint(stores[i], ws.checkpoint_file(seeds[i]).string());
  write_text_file(ws.report_txt().string(), format_report(report));

  std::ostringstream trace;
  trace.imbue(std::locale::classic());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    trace << "seed " << seeds[i] << "\n";
    trace << "epoch train_loss val_auprc\n";
    for (std::size_t e = 0; e < results[i].val_auprc.size(); ++e)
      trace << (e + 1) << " " << fmt6(results[i].train_loss[e]) << " "
            << fmt6(results[i].val_auprc[e]) << "\n";
    trace << "\n";
  }
  write_text_file(ws.trace_txt().string(), trace.str());

  bool any_diverged = false;
  json extra;
  extra["epochs_to_best"] = json::array();
  extra["diverged"] = json::array();
  extra["best_val_auprc"] = json::array();
  extra["train_patients"] = json::array();
  extra["train_samples"] = json::array();
  for (const auto& r : results) {
    extra["epochs_to_best"].push_back(r.epochs_to_best);
    extra["diverged"].push_back(r.diverged);
    extra["best_val_auprc"].push_back(r.best_val_auprc);
    extra["train_patients"].push_back(r.train_patients);
    extra["train_samples"].push_back(r.train_samples);
    any_diverged = any_diverged || r.diverged;
  }
  write_manifest(ws.manifest("train"), identity, outputs, any_diverged ? "diverged" : "ok",
                 extra);

  std::vector<double> auprcs;
  for (const auto& r : results) auprcs.push_back(r.test.auprc);
  auto ci = mean_ci(auprcs);
  std::cout << "train: test auprc " << fmt6(ci.mean) << " +/- " << fmt6(ci.half_width) << " over "
            << seeds.size() << " seed(s) -> " << ws.report_txt().string() << "\n";
  if (any_diverged) {
    std::cerr << "train: at least one seed diverged; restored last good parameters\n";
    return 4;
  }
  return 0;
}

int cmd_evaluate(const KvConfig& kv, const Workspace& ws, bool force) {
  auto seeds = seeds_from(kv);
  TrainConfig probe = train_from(kv);
  probe.validate();

  auto inputs = data_input_hashes(ws, /*with_cohort=*/true, /*with_graph=*/true);
  for (std::uint64_t s : seeds) {
    fs::path cp = ws.checkpoint_file(s);
    if (!fs::exists(cp))
      throw DataError("checkpoint " + cp.string() + " not found; run train first");
    inputs[cp.filename().string()] = sha256_file_hex(cp.string());
  }
  json identity = make_identity("evaluate", config_subset(kv, train_selectors()), inputs);
  std::vector<fs::path> outputs{ws.report_eval_txt()};
  if (!force && manifest_matches(ws.manifest("evaluate"), identity, outputs)) {
    std::cout << "evaluate: up to date (" << ws.report_eval_txt().string() << ")\n";
    return 0;
  }

  OntologySet onts = load_workspace_onts(ws);
  Cohort cohort = load_workspace_cohort(ws, onts);
  MetaKG kg = load_workspace_graph(ws, onts);
  const int n_dx = onts.dx_leaf_count();
  auto samples = make_samples(cohort, n_dx);

  // Training bookkeeping (epochs to best, divergence) comes from the train
  // manifest when one is present; the metrics themselves are re-derived.
  std::map<std::uint64_t, std::pair<int, bool>> train_info;
  if (fs::exists(ws.manifest("train"))) {
    try {
      json tm = json::parse(read_text_file(ws.manifest("train").string()));
      auto ts = tm.value("config", json::object()).value("seeds", std::string());
      auto eb = tm.value("epochs_to_best", json::array());
      auto dv = tm.value("diverged", json::array());
      for (char& ch : ts)
        if (ch == ',' || ch == '\t') ch = ' ';
      std::istringstream in(ts);
      std::uint64_t s = 0;
      std::size_t i = 0;
      while (in >> s && i < eb.size() && i < dv.size()) {
        train_info[s] = {eb[i].get<int>(), dv[i].get<bool>()};
        ++i;
      }
    } catch (...) {
      // Manifest unreadable: report zeros rather than failing the evaluation.
    }
  }

  MetricsReport report;
  for (std::uint64_t seed : seeds) {
    TrainConfig tc = train_from(kv);
    tc.seed = seed;
    SplitIndices split = resolve_split(samples, static_cast<int>(cohort.records.size()), tc);
    auto freq = label_frequencies(samples, split.train, n_dx);

    ag::ParamStore store;
    std::mt19937_64 init_rng(substream_seed(seed, "init"));
    // Placeholder values; the checkpoint overwrites every parameter.
    auto init = random_level_embeddings(onts, tc.encoder.d, substream_seed(seed, "init-emb"));
    EncoderParams enc = make_encoder(store, tc.encoder, onts, init, init_rng);
    PredictorParams pred = make_predictor(store, tc.predictor, n_dx, init_rng);
    load_checkpoint(store, ws.checkpoint_file(seed).string());

    report.seeds.push_back(seed);
    report.per_seed.push_back(
        evaluate_samples(enc, pred, kg, onts, cohort, samples, split.test, freq));
    auto it = train_info.find(seed);
    report.epochs_to_best.push_back(it != train_info.end() ? it->second.first : 0);
    report.diverged.push_back(it != train_info.end() && it->second.second);
  }

  write_text_file(ws.report_eval_txt().string(), format_report(report));
  write_manifest(ws.manifest("evaluate"), identity, outputs, "ok");

  std::vector<double> auprcs;
  for (const auto& m : report.per_seed) auprcs.push_back(m.auprc);
  auto ci = mean_ci(auprcs);
  std::cout << "evaluate: test auprc " << fmt6(ci.mean) << " +/- " << fmt6(ci.half_width)
            << " over " << seeds.size() << " seed(s) -> " << ws.report_eval_txt().string() << "\n";
  return 0;
}

struct AblateRow {
  const char* name;
  std::vector<std::pair<const char*, const char*>> overrides;
};

const std::vector<AblateRow>& ablate_rows() {
  static const std::vector<AblateRow> rows{
      {"full", {}},
      {"w/o HGIP", {{"encoder.vertical", "false"}}},
      {"w/o LLM", {{"encoder.llm_init", "false"}}},
      {"w/o leaf-HMP", {{"encoder.leaf_horizontal", "false"}}},
      {"w/o parent-HMP", {{"encoder.parent_horizontal", "false"}}},
      {"w/o HMP",
       {{"encoder.leaf_horizontal", "false"}, {"encoder.parent_horizontal", "false"}}},
  };
  return rows;
}

int cmd_ablate(const KvConfig& kv, const Workspace& ws, bool force) {
  auto seeds = seeds_from(kv);
  train_from(kv).validate();

  auto inputs = data_input_hashes(ws, /*with_cohort=*/true, /*with_graph=*/true);
  OntologySet onts = load_workspace_onts(ws);
  if (train_from(kv).encoder.llm_init) {
    std::string emb_hash;
    init_for_run(kv, onts, ws, seeds.front(), true, &emb_hash);
    inputs["embeddings"] = emb_hash;
  }
  json identity = make_identity("ablate", config_subset(kv, train_selectors()), inputs);
  std::vector<fs::path> outputs{ws.ablate_txt()};
  if (!force && manifest_matches(ws.manifest("ablate"), identity, outputs)) {
    std::cout << "ablate: up to date (" << ws.ablate_txt().string() << ")\n";
    return 0;
  }

  Cohort cohort = load_workspace_cohort(ws, onts);
  MetaKG kg = load_workspace_graph(ws, onts);

  std::ostringstream table;
  table.imbue(std::locale::classic());
  table << "row             auprc    +/- ci95     | per-seed\n";
  json extra;
  extra["rows"] = json::object();
  bool any_diverged = false;

  for (const auto& row : ablate_rows()) {
    KvConfig row_kv = kv;
    for (const auto& [k, v] : row.overrides) row_kv.set(k, v);
    MetricsReport rep;
    auto results = run_seeds(row_kv, onts, kg, cohort, ws, seeds, &rep, nullptr, nullptr);

    std::vector<double> auprcs;
    for (const auto& r : results) {
      auprcs.push_back(r.test.auprc);
      any_diverged = any_diverged || r.diverged;
    }
    auto ci = mean_ci(auprcs);
    table << std::left << std::setw(15) << row.name << " " << fmt6(ci.mean) << " +/- "
          << fmt6(ci.half_width) << " |";
    for (double v : auprcs) table << " " << fmt6(v);
    table << "\n";
    extra["rows"][row.name] = auprcs;
    std::cout << "ablate: " << row.name << " auprc " << fmt6(ci.mean) << " +/- "
              << fmt6(ci.half_width) << "\n";
  }

  fs::create_directories(ws.dir);
  write_text_file(ws.ablate_txt().string(), table.str());
  write_manifest(ws.manifest("ablate"), identity, outputs, any_diverged ? "diverged" : "ok",
                 extra);
  std::cout << "ablate: table -> " << ws.ablate_txt().string() << "\n";
  return any_diverged ? 4 : 0;
}

int cmd_sweep_trainsize(const KvConfig& kv, const Workspace& ws, bool force) {
  auto seeds = seeds_from(kv);
  train_from(kv).validate();
  auto fractions = kv.get_double_list("sweep.fractions", {0.2, 0.4, 0.6, 0.8, 1.0});
  for (double f : fractions)
    if (f <= 0.0 || f > 1.0)
      throw ConfigError("sweep.fractions entries must lie in (0, 1], got " + std::to_string(f));

  auto inputs = data_input_hashes(ws, /*with_cohort=*/true, /*with_graph=*/true);
  OntologySet onts = load_workspace_onts(ws);
  if (train_from(kv).encoder.llm_init) {
    std::string emb_hash;
    init_for_run(kv, onts, ws, seeds.front(), true, &emb_hash);
    inputs["embeddings"] = emb_hash;
  }
  auto selectors = train_selectors();
  selectors.push_back("sweep.fractions");
  json identity = make_identity("sweep-trainsize", config_subset(kv, selectors), inputs);
  std::vector<fs::path> outputs{ws.sweep_txt()};
  if (!force && manifest_matches(ws.manifest("sweep-trainsize"), identity, outputs)) {
    std::cout << "sweep-trainsize: up to date (" << ws.sweep_txt().string() << ")\n";
    return 0;
  }

  Cohort cohort = load_workspace_cohort(ws, onts);
  MetaKG kg = load_workspace_graph(ws, onts);

  std::ostringstream table;
  table.imbue(std::locale::classic());
  table << "fraction auprc    +/- ci95     | per-seed auprc | train_patients | train_samples\n";
  json extra;
  extra["fractions"] = json::object();
  bool any_diverged = false;

  for (double f : fractions) {
    KvConfig row_kv = kv;
    row_kv.set("train.fraction", fmt6(f));
    auto results = run_seeds(row_kv, onts, kg, cohort, ws, seeds, nullptr, nullptr, nullptr);

    std::vector<double> auprcs;
    std::vector<int> patients, samples;
    for (const auto& r : results) {
      auprcs.push_back(r.test.auprc);
      patients.push_back(r.train_patients);
      samples.push_back(r.train_samples);
      any_diverged = any_diverged || r.diverged;
    }
    auto ci = mean_ci(auprcs);
    std::ostringstream frac;
    frac.imbue(std::locale::classic());
    frac << std::fixed << std::setprecision(2) << f;
    table << std::left << std::setw(8) << frac.str() << " " << fmt6(ci.mean) << " +/- "
          << fmt6(ci.half_width) << " |";
    for (double v : auprcs) table << " " << fmt6(v);
    table << " |";
    for (int p : patients) table << " " << p;
    table << " |";
    for (int s : samples) table << " " << s;
    table << "\n";

    json row;
    row["auprc"] = auprcs;
    row["train_patients"] = patients;
    row["train_samples"] = samples;
    extra["fractions"][frac.str()] = row;
    std::cout << "sweep-trainsize: fraction " << frac.str() << " auprc " << fmt6(ci.mean)
              << " +/- " << fmt6(ci.half_width) << "\n";
  }

  fs::create_directories(ws.dir);
  write_text_file(ws.sweep_txt().string(), table.str());
  write_manifest(ws.manifest("sweep-trainsize"), identity, outputs,
                 any_diverged ? "diverged" : "ok", extra);
  std::cout << "sweep-trainsize: table -> " << ws.sweep_txt().string() << "\n";
  return any_diverged ? 4 : 0;
}

// ---------------------------------------------------------------------------
// Argument plumbing
// ---------------------------------------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::string dir = "run";
  bool force = false;
  std::vector<std::string> sets;
  std::string seed;
};

void add_common(CLI::App* sub, CommonArgs& c) {
  sub->add_option("--config", c.config_path, "configuration file (key = value lines)");
  sub->add_option("--dir", c.dir, "workspace directory for artifacts")->capture_default_str();
  sub->add_flag("--force", c.force, "re-run even when the manifest says up to date");
  sub->add_option("--seed", c.seed, "root random seed");
  sub->add_option("--set", c.sets, "override any config key, e.g. --set train.lr=0.01");
}

KvConfig resolve_config(const CommonArgs& c,
                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  KvConfig kv = default_config();
  if (!c.config_path.empty()) {
    KvConfig file = KvConfig::from_file(c.config_path);
    for (const auto& [k, v] : file.entries()) kv.set(k, v);
  }
  for (const auto& s : c.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (!c.seed.empty()) kv.set("seed", c.seed);
  for (const auto& [k, v] : overrides) kv.set(k, v);
  if (kv.get_str("seeds", "").empty()) kv.set("seeds", kv.get_str("seed", "1"));
  kv.require_known(known_keys());
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-ontology medical-concept representation pipeline"};
  app.require_subcommand(1);

  CommonArgs gen_args, kg_args, emb_args, train_args, eval_args, abl_args, sweep_args;

  auto* gen = app.add_subcommand("gen-cohort", "generate a synthetic cohort and its ontologies");
  add_common(gen, gen_args);
  std::string gen_patients;
  gen->add_option("--patients", gen_patients, "number of patients");

  auto* bkg = app.add_subcommand("build-metakg", "derive the co-occurrence graph stack");
  add_common(bkg, kg_args);
  std::string kg_tau;
  bkg->add_option("--tau", kg_tau, "co-occurrence edge threshold(s)");

  auto* emb = app.add_subcommand("init-embeddings", "fill the prompt-embedding cache");
  add_common(emb, emb_args);
  std::string emb_provider, emb_variant, emb_dim;
  emb->add_option("--provider", emb_provider, "embedding provider: mock or remote");
  emb->add_option("--prompt-variant", emb_variant,
                  "prompt content: full, no-task, no-parent, concept, code, noise");
  emb->add_option("--dim", emb_dim, "embedding width");

  auto* trn = app.add_subcommand("train", "train the encoder + predictor and write a report");
  add_common(trn, train_args);
  std::string trn_seeds, trn_fraction, trn_epochs, trn_provider, trn_variant;
  bool trn_no_hmp = false, trn_no_leaf = false, trn_no_parent = false, trn_no_hgip = false,
       trn_no_llm = false;
  trn->add_option("--seeds", trn_seeds, "comma-separated training seeds");
  trn->add_option("--fraction", trn_fraction, "training-patient fraction in (0, 1]");
  trn->add_option("--max-epochs", trn_epochs, "epoch budget");
  trn->add_option("--provider", trn_provider, "embedding provider the cache was filled with");
  trn->add_option("--prompt-variant", trn_variant, "prompt variant the cache was filled with");
  trn->add_flag("--no-hmp", trn_no_hmp, "disable all per-level co-occurrence passes");
  trn->add_flag("--no-leaf-hmp", trn_no_leaf, "disable the leaf co-occurrence pass");
  trn->add_flag("--no-parent-hmp", trn_no_parent, "disable ancestor co-occurrence passes");
  trn->add_flag("--no-hgip", trn_no_hgip, "disable bottom-up child-to-parent propagation");
  trn->add_flag("--no-llm", trn_no_llm, "seeded uniform init instead of prompt embeddings");

  auto* evl = app.add_subcommand("evaluate", "re-derive test metrics from saved checkpoints");
  add_common(evl, eval_args);
  std::string evl_seeds;
  evl->add_option("--seeds", evl_seeds, "comma-separated seeds whose checkpoints to score");

  auto* abl = app.add_subcommand("ablate", "train each component-removal arm and tabulate");
  add_common(abl, abl_args);
  std::string abl_seeds, abl_epochs;
  abl->add_option("--seeds", abl_seeds, "comma-separated training seeds");
  abl->add_option("--max-epochs", abl_epochs, "epoch budget per arm");

  auto* swp = app.add_subcommand("sweep-trainsize", "train at several training-set fractions");
  add_common(swp, sweep_args);
  std::string swp_seeds, swp_fractions, swp_epochs;
  swp->add_option("--seeds", swp_seeds, "comma-separated training seeds");
  swp->add_option("--fractions", swp_fractions, "fractions to sweep, e.g. 0.2,0.6,1.0");
  swp->add_option("--max-epochs", swp_epochs, "epoch budget per fraction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::vector<std::pair<std::string, std::string>> ov;
    if (gen->parsed()) {
      if (!gen_patients.empty()) ov.emplace_back("cohort.patients", gen_patients);
      return cmd_gen_cohort(resolve_config(gen_args, ov), Workspace{fs::path(gen_args.dir)},
                            gen_args.force);
    }
    if (bkg->parsed()) {
      if (!kg_tau.empty()) ov.emplace_back("metakg.tau", kg_tau);
      return cmd_build_metakg(resolve_config(kg_args, ov), Workspace{fs::path(kg_args.dir)},
                              kg_args.force);
    }
    if (emb->parsed()) {
      if (!emb_provider.empty()) ov.emplace_back("embed.provider", emb_provider);
      if (!emb_variant.empty()) ov.emplace_back("embed.variant", emb_variant);
      if (!emb_dim.empty()) ov.emplace_back("model.d", emb_dim);
      return cmd_init_embeddings(resolve_config(emb_args, ov), Workspace{fs::path(emb_args.dir)},
                                 emb_args.force);
    }
    if (trn->parsed()) {
      if (!trn_seeds.empty()) ov.emplace_back("seeds", trn_seeds);
      if (!trn_fraction.empty()) ov.emplace_back("train.fraction", trn_fraction);
      if (!trn_epochs.empty()) ov.emplace_back("train.max_epochs", trn_epochs);
      if (!trn_provider.empty()) ov.emplace_back("embed.provider", trn_provider);
      if (!trn_variant.empty()) ov.emplace_back("embed.variant", trn_variant);
      if (trn_no_hmp || trn_no_leaf) ov.emplace_back("encoder.leaf_horizontal", "false");
      if (trn_no_hmp || trn_no_parent) ov.emplace_back("encoder.parent_horizontal", "false");
      if (trn_no_hgip) ov.emplace_back("encoder.vertical", "false");
      if (trn_no_llm) ov.emplace_back("encoder.llm_init", "false");
      return cmd_train(resolve_config(train_args, ov), Workspace{fs::path(train_args.dir)},
                       train_args.force);
    }
    if (evl->parsed()) {
      if (!evl_seeds.empty()) ov.emplace_back("seeds", evl_seeds);
      return cmd_evaluate(resolve_config(eval_args, ov), Workspace{fs::path(eval_args.dir)},
                          eval_args.force);
    }
    if (abl->parsed()) {
      if (!abl_seeds.empty()) ov.emplace_back("seeds", abl_seeds);
      if (!abl_epochs.empty()) ov.emplace_back("train.max_epochs", abl_epochs);
      return cmd_ablate(resolve_config(abl_args, ov), Workspace{fs::path(abl_args.dir)},
                        abl_args.force);
    }
    if (swp->parsed()) {
      if (!swp_seeds.empty()) ov.emplace_back("seeds", swp_seeds);
      if (!swp_fractions.empty()) ov.emplace_back("sweep.fractions", swp_fractions);
      if (!swp_epochs.empty()) ov.emplace_back("train.max_epochs", swp_epochs);
      return cmd_sweep_trainsize(resolve_config(sweep_args, ov),
                                 Workspace{fs::path(sweep_args.dir)}, sweep_args.force);
    }
    std::cerr << "no subcommand selected\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
