#include "medkg/cohort.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

namespace medkg {

int Cohort::total_visits() const {
  int n = 0;
  for (const auto& r : records) n += static_cast<int>(r.visits.size());
  return n;
}

namespace {

Visit parse_visit(const std::string& text, const OntologySet& onts, const std::string& where) {
  Visit v;
  std::set<int> seen;
  for (const std::string& entry : split(text, ',')) {
    auto pos = entry.rfind(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 == entry.size()) {
      throw DataError(where + ": malformed code entry '" + entry + "'");
    }
    std::string code = entry.substr(0, pos);
    auto type = parse_type_tag(entry.substr(pos + 1));
    if (!type) throw DataError(where + ": unknown code type in '" + entry + "'");
    int uid = onts.find_leaf(*type, code);
    if (uid < 0) {
      throw DataError(where + ": unknown code '" + code + "' (" + entry.substr(pos + 1) + ")");
    }
    seen.insert(uid);
  }
  v.codes.assign(seen.begin(), seen.end());
  return v;
}

}  // namespace

Cohort load_cohort(const std::string& path, const OntologySet& onts, bool strict,
                   std::vector<std::string>* diagnostics) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open cohort file: " + path);
  Cohort cohort;
  std::string line;
  size_t lineno = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    any = true;
    std::string where = path + ": line " + std::to_string(lineno);
    try {
      auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0) throw DataError(where + ": expected patient_id<TAB>visits");
      PatientRecord rec;
      rec.patient_id = line.substr(0, tab);
      std::string visits_text = line.substr(tab + 1);
      if (trim(visits_text).empty()) throw DataError(where + ": patient has no visits");
      for (const std::string& vt : split(visits_text, ';')) {
        if (trim(vt).empty()) throw DataError(where + ": empty visit");
        rec.visits.push_back(parse_visit(vt, onts, where));
      }
      cohort.records.push_back(std::move(rec));
    } catch (const DataError& e) {
      if (strict) throw;
      if (diagnostics) diagnostics->push_back(e.what());
    }
  }
  if (!any && diagnostics) diagnostics->push_back(path + ": empty cohort file");
  return cohort;
}

void write_cohort(const Cohort& cohort, const OntologySet& onts, const std::string& path) {
  std::ostringstream out;
  int depth = onts.depth();
  for (const auto& rec : cohort.records) {
    out << rec.patient_id << '\t';
    for (size_t v = 0; v < rec.visits.size(); ++v) {
      if (v) out << ';';
      const auto& codes = rec.visits[v].codes;
      for (size_t c = 0; c < codes.size(); ++c) {
        if (c) out << ',';
        ConceptId id = onts.concept_at(depth, codes[c]);
        out << id.code << ':' << type_tag(id.type);
      }
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<Sample> make_samples(const Cohort& cohort, int dx_leaf_count) {
  std::vector<Sample> samples;
  for (int p = 0; p < static_cast<int>(cohort.records.size()); ++p) {
    const auto& visits = cohort.records[p].visits;
    for (int t = 1; t < static_cast<int>(visits.size()); ++t) {
      Sample s;
      s.patient = p;
      s.prefix_len = t;
      for (int uid : visits[t].codes) {
        // dx leaves occupy the unified index prefix
        if (uid < dx_leaf_count) s.target_dx.push_back(uid);
      }
      if (s.target_dx.empty()) continue;
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

std::vector<FoldSplit> split_samples(const std::vector<Sample>& samples, int n_patients,
                                     int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("split needs at least 2 folds");
  if (n_patients < folds) {
    throw ConfigError("fewer patients (" + std::to_string(n_patients) + ") than folds (" +
                      std::to_string(folds) + ")");
  }
  std::vector<int> order(n_patients);
  for (int i = 0; i < n_patients; ++i) order[i] = i;
  auto rng = substream(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold_of(n_patients);
  for (int j = 0; j < n_patients; ++j) fold_of[order[j]] = j % folds;

  std::vector<FoldSplit> out(folds);
  for (int f = 0; f < folds; ++f) {
    int val_fold = (f + 1) % folds;
    for (int s = 0; s < static_cast<int>(samples.size()); ++s) {
      int pf = fold_of[samples[s].patient];
      if (pf == f) out[f].test.push_back(s);
      else if (pf == val_fold) out[f].val.push_back(s);
      else out[f].train.push_back(s);
    }
  }
  return out;
}

void SynthConfig::validate() const {
  if (patients < 1) throw ConfigError("synthetic cohort needs at least one patient");
  if (clusters < 1) throw ConfigError("clusters must be >= 1");
  if (strength < 0.0 || strength > 1.0) throw ConfigError("strength must be in [0,1]");
  if (parent_alignment < 0.0 || parent_alignment > 1.0)
    throw ConfigError("parent_alignment must be in [0,1]");
  if (family_strength < 0.0 || family_strength > 1.0)
    throw ConfigError("family_strength must be in [0,1]");
  if (min_visits < 1 || max_visits < min_visits) throw ConfigError("bad visit count range");
  if (dx_per_visit < 1.0) throw ConfigError("dx_per_visit must be >= 1 so targets are non-empty");
  if (dx_per_visit > dx_leaves || rx_per_visit > rx_leaves || px_per_visit > px_leaves)
    throw ConfigError("more codes per visit than leaves");
  if (dx_parents > dx_leaves || rx_parents > rx_leaves || px_parents > px_leaves)
    throw ConfigError("more parents than leaves");
  if (dx_roots > dx_parents || rx_roots > rx_parents || px_roots > px_parents)
    throw ConfigError("more roots than parents");
  if (dx_roots < 1 || rx_roots < 1 || px_roots < 1) throw ConfigError("each system needs a root");
}

namespace {

struct SystemSpec {
  ConceptType type;
  char letter;
  const char* noun;
  int leaves, parents, roots;
  double per_visit;
};

std::string pad_num(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

Ontology synth_ontology(const SystemSpec& spec, int clusters, double alignment,
                        std::mt19937_64& rng, std::vector<int>& leaf_cluster,
                        std::vector<int>& leaf_parent) {
  std::vector<std::array<std::string, 4>> rows;
  std::uniform_int_distribution<int> pick_cluster(0, clusters - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::string> root_codes(spec.roots), parent_codes(spec.parents);
  for (int r = 0; r < spec.roots; ++r) {
    root_codes[r] = std::string(1, spec.letter) + "R" + pad_num(r, 1);
    rows.push_back({root_codes[r], "1", "",
                    std::string(spec.noun) + " chapter " + std::to_string(r)});
  }
  std::vector<int> parent_cluster(spec.parents);
  std::vector<std::vector<int>> parents_of_cluster(clusters);
  for (int p = 0; p < spec.parents; ++p) {
    int c = p % clusters;
    parent_cluster[p] = c;
    parents_of_cluster[c].push_back(p);
    parent_codes[p] = std::string(1, spec.letter) + "P" + pad_num(p, 2);
    rows.push_back({parent_codes[p], "2", root_codes[c % spec.roots],
                    std::string(spec.noun) + " group " + std::to_string(p) + " family " +
                        std::to_string(c)});
  }
  leaf_cluster.resize(spec.leaves);
  leaf_parent.resize(spec.leaves);
  std::uniform_int_distribution<int> pick_parent(0, spec.parents - 1);
  for (int i = 0; i < spec.leaves; ++i) {
    int z = pick_cluster(rng);
    leaf_cluster[i] = z;
    int parent;
    if (unit(rng) < alignment && !parents_of_cluster[z].empty()) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(parents_of_cluster[z].size()) - 1);
      parent = parents_of_cluster[z][pick(rng)];
    } else {
      parent = pick_parent(rng);
    }
    leaf_parent[i] = parent;
    rows.push_back({std::string(1, spec.letter) + pad_num(i, 3), "3", parent_codes[parent],
                    std::string(spec.noun) + " " + std::to_string(i) + " family " +
                        std::to_string(z) + " variant " + std::to_string(i % 7)});
  }
  return ontology_from_rows(spec.type, "synthetic " + std::string(spec.noun), rows, "synthetic");
}

}  // namespace

SyntheticData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  auto rng_ont = substream(cfg.seed, "synth-ontology");
  auto rng_pat = substream(cfg.seed, "synth-cohort");

  std::array<SystemSpec, 3> specs{{
      {ConceptType::dx, 'D', "disorder", cfg.dx_leaves, cfg.dx_parents, cfg.dx_roots, cfg.dx_per_visit},
      {ConceptType::rx, 'M', "medication", cfg.rx_leaves, cfg.rx_parents, cfg.rx_roots, cfg.rx_per_visit},
      {ConceptType::px, 'X', "procedure", cfg.px_leaves, cfg.px_parents, cfg.px_roots, cfg.px_per_visit},
  }};

  std::vector<Ontology> onts;
  std::array<std::vector<int>, 3> leaf_cluster;
  std::array<std::vector<int>, 3> leaf_parent;
  for (int s = 0; s < 3; ++s) {
    onts.push_back(synth_ontology(specs[s], cfg.clusters, cfg.parent_alignment, rng_ont,
                                  leaf_cluster[s], leaf_parent[s]));
  }
  OntologySet set(std::move(onts));

  // per (system, cluster) pools of unified leaf ids
  std::array<std::vector<std::vector<int>>, 3> pools;
  std::array<std::vector<int>, 3> all_leaves;
  for (int s = 0; s < 3; ++s) {
    pools[s].assign(cfg.clusters, {});
    for (int i = 0; i < specs[s].leaves; ++i) {
      int uid = set.unified_id(set.depth(), s, i);
      pools[s][leaf_cluster[s][i]].push_back(uid);
      all_leaves[s].push_back(uid);
    }
  }

  // diagnosis families: the leaf pool under each dx parent, plus, per cluster,
  // the parents that can serve as a patient's primary family (non-empty pools,
  // same cluster under synth_ontology's p % clusters assignment)
  std::vector<std::vector<int>> dx_family(static_cast<std::size_t>(cfg.dx_parents));
  for (int i = 0; i < cfg.dx_leaves; ++i)
    dx_family[static_cast<std::size_t>(leaf_parent[0][static_cast<std::size_t>(i)])].push_back(
        set.unified_id(set.depth(), 0, i));
  std::vector<std::vector<int>> cluster_families(static_cast<std::size_t>(cfg.clusters));
  for (int p = 0; p < cfg.dx_parents; ++p)
    if (!dx_family[static_cast<std::size_t>(p)].empty())
      cluster_families[static_cast<std::size_t>(p % cfg.clusters)].push_back(p);

  std::uniform_int_distribution<int> pick_cluster(0, cfg.clusters - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_visits(cfg.min_visits, cfg.max_visits);

  Cohort cohort;
  cohort.records.reserve(cfg.patients);
  int id_width = static_cast<int>(std::to_string(cfg.patients - 1).size());
  for (int p = 0; p < cfg.patients; ++p) {
    PatientRecord rec;
    rec.patient_id = "P" + pad_num(p, id_width);
    int primary = pick_cluster(rng_pat);
    int secondary = pick_cluster(rng_pat);
    int family = -1;  // the patient's persistent diagnosis family, if any
    const auto& fams = cluster_families[static_cast<std::size_t>(primary)];
    if (!fams.empty()) {
      std::uniform_int_distribution<int> pick_family(0, static_cast<int>(fams.size()) - 1);
      family = fams[static_cast<std::size_t>(pick_family(rng_pat))];
    }
    int visits = pick_visits(rng_pat);
    for (int v = 0; v < visits; ++v) {
      std::set<int> codes;
      for (int s = 0; s < 3; ++s) {
        double mean = specs[s].per_visit;
        int n;
        if (s == 0) {
          std::poisson_distribution<int> extra(mean - 1.0);
          n = 1 + extra(rng_pat);  // every visit carries a diagnosis
        } else {
          std::poisson_distribution<int> count(mean);
          n = count(rng_pat);
        }
        n = std::min(n, specs[s].leaves);
        // distinct codes per visit: cluster-sourced draws first, background
        // fills the rest, so the visit size tracks the configured mean
        std::set<int> taken;
        int want_cluster = 0;
        for (int k = 0; k < n; ++k)
          if (unit(rng_pat) < cfg.strength) ++want_cluster;
        auto draw_from = [&](const std::vector<int>& pool) {
          for (int attempt = 0; attempt < 16; ++attempt) {
            std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
            int uid = pool[pick(rng_pat)];
            if (taken.insert(uid).second) return true;
          }
          return false;
        };
        int placed = 0;
        for (int k = 0; k < want_cluster; ++k) {
          int z = unit(rng_pat) < 0.7 ? primary : secondary;
          // primary-cluster diagnoses persist within the patient's family
          if (s == 0 && z == primary && family >= 0 &&
              unit(rng_pat) < cfg.family_strength) {
            if (draw_from(dx_family[static_cast<std::size_t>(family)])) ++placed;
            continue;
          }
          const auto& pool = pools[s][z].empty() ? all_leaves[s] : pools[s][z];
          if (draw_from(pool)) ++placed;
        }
        while (placed < n && draw_from(all_leaves[s])) ++placed;
        codes.insert(taken.begin(), taken.end());
      }
      Visit visit;
      visit.codes.assign(codes.begin(), codes.end());
      rec.visits.push_back(std::move(visit));
    }
    cohort.records.push_back(std::move(rec));
  }
  return SyntheticData{std::move(set), std::move(cohort)};
}

}  // namespace medkg
