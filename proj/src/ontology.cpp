#include "medkg/ontology.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <sstream>

namespace medkg {

const char* type_tag(ConceptType t) {
  switch (t) {
    case ConceptType::dx: return "dx";
    case ConceptType::rx: return "rx";
    case ConceptType::px: return "px";
  }
  return "?";
}

std::optional<ConceptType> parse_type_tag(std::string_view tag) {
  if (tag == "dx") return ConceptType::dx;
  if (tag == "rx") return ConceptType::rx;
  if (tag == "px") return ConceptType::px;
  return std::nullopt;
}

std::string default_system_label(ConceptType t) {
  switch (t) {
    case ConceptType::dx: return "ICD-9 diagnosis";
    case ConceptType::rx: return "ATC drug";
    case ConceptType::px: return "ICD-9 procedure";
  }
  return "concept";
}

int Ontology::level_size(int level) const {
  if (level < 1 || level > depth) throw ConfigError("level out of range");
  return static_cast<int>(levels[level - 1].size());
}

int Ontology::find(int level, const std::string& code) const {
  if (level < 1 || level > depth) return -1;
  const auto& m = lookup_[level - 1];
  auto it = m.find(code);
  return it == m.end() ? -1 : it->second;
}

const OntologyNode& Ontology::node(int level, int idx) const {
  return levels.at(level - 1).at(idx);
}

ConceptId Ontology::id_of(int level, int idx) const {
  return ConceptId{type, node(level, idx).code, level};
}

Ontology ontology_from_rows(ConceptType type, const std::string& system_label,
                            const std::vector<std::array<std::string, 4>>& rows,
                            const std::string& origin) {
  struct Raw {
    std::string code, parent, desc;
    size_t line;
  };
  std::vector<std::vector<Raw>> by_level;
  int depth = 0;
  for (size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string& code = row[0];
    if (code.empty()) throw DataError(origin + ": empty code at row " + std::to_string(r + 2));
    int level = 0;
    try {
      size_t pos = 0;
      level = std::stoi(row[1], &pos);
      if (pos != row[1].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw DataError(origin + ": bad level '" + row[1] + "' at row " + std::to_string(r + 2));
    }
    if (level < 1) throw DataError(origin + ": level must be >= 1 at row " + std::to_string(r + 2));
    if (level > depth) {
      depth = level;
      by_level.resize(depth);
    }
    by_level[level - 1].push_back(Raw{code, row[2], row[3], r + 2});
  }
  if (depth == 0) throw DataError(origin + ": no rows");
  for (int l = 0; l < depth; ++l) {
    if (by_level[l].empty())
      throw DataError(origin + ": level gap, no nodes at level " + std::to_string(l + 1));
  }

  Ontology ont;
  ont.type = type;
  ont.system_label = system_label.empty() ? default_system_label(type) : system_label;
  ont.depth = depth;
  ont.levels.resize(depth);
  ont.lookup_.resize(depth);

  for (int l = 0; l < depth; ++l) {
    for (const Raw& raw : by_level[l]) {
      auto& lookup = ont.lookup_[l];
      auto it = lookup.find(raw.code);
      if (it != lookup.end()) {
        const OntologyNode& prev = ont.levels[l][it->second];
        std::string prev_parent = prev.parent >= 0 ? ont.levels[l - 1][prev.parent].code : "";
        if (prev_parent != raw.parent) {
          throw DataError(origin + ": node '" + raw.code + "' at level " +
                          std::to_string(l + 1) + " lists two distinct parents ('" +
                          prev_parent + "' and '" + raw.parent + "')");
        }
        throw DataError(origin + ": duplicate code '" + raw.code + "' at level " +
                        std::to_string(l + 1));
      }
      OntologyNode node;
      node.code = raw.code;
      node.description = raw.desc;
      if (node.description.empty()) ++ont.empty_description_count;
      if (l == 0) {
        if (!raw.parent.empty()) {
          throw DataError(origin + ": root '" + raw.code + "' must have empty parent, got '" +
                          raw.parent + "' (row " + std::to_string(raw.line) + ")");
        }
      } else {
        int pidx = ont.find(l, raw.parent);
        if (pidx < 0) {
          throw DataError(origin + ": orphan node '" + raw.code + "' at level " +
                          std::to_string(l + 1) + ", parent '" + raw.parent +
                          "' not found at level " + std::to_string(l));
        }
        node.parent = pidx;
      }
      int idx = static_cast<int>(ont.levels[l].size());
      ont.levels[l].push_back(std::move(node));
      lookup.emplace(raw.code, idx);
      if (l > 0) ont.levels[l - 1][ont.levels[l][idx].parent].children.push_back(idx);
    }
  }

  // Ragged leaves: repeat the node downward so every chain reaches `depth`.
  for (int l = 0; l < depth - 1; ++l) {
    int n = static_cast<int>(ont.levels[l].size());
    for (int i = 0; i < n; ++i) {
      if (!ont.levels[l][i].children.empty()) continue;
      OntologyNode pad;
      pad.code = ont.levels[l][i].code;
      pad.description = ont.levels[l][i].description;
      pad.parent = i;
      pad.padded = true;
      if (ont.lookup_[l + 1].count(pad.code)) {
        throw DataError(origin + ": cannot pad '" + pad.code + "' down to level " +
                        std::to_string(l + 2) + ", code already present there");
      }
      int idx = static_cast<int>(ont.levels[l + 1].size());
      ont.levels[l + 1].push_back(std::move(pad));
      ont.lookup_[l + 1].emplace(ont.levels[l + 1][idx].code, idx);
      ont.levels[l][i].children.push_back(idx);
      ++ont.padded_count;
    }
  }
  return ont;
}

Ontology load_ontology(const std::string& path, ConceptType type,
                       const std::string& system_label) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ontology file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (split_csv_row(line) != std::vector<std::string>{"code", "level", "parent_code", "description"}) {
    throw DataError(path + ": expected header 'code,level,parent_code,description'");
  }
  std::vector<std::array<std::string, 4>> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv_row(line);
    if (fields.size() != 4) {
      throw DataError(path + ": line " + std::to_string(lineno) + ": expected 4 fields, got " +
                      std::to_string(fields.size()));
    }
    rows.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  return ontology_from_rows(type, system_label, rows, path);
}

void write_ontology_csv(const Ontology& ont, const std::string& path) {
  std::ostringstream out;
  out << "code,level,parent_code,description\n";
  for (int l = 1; l <= ont.depth; ++l) {
    for (const auto& node : ont.levels[l - 1]) {
      if (node.padded) continue;  // padding is reconstructed on load
      std::string parent = node.parent >= 0 ? ont.levels[l - 2][node.parent].code : "";
      out << csv_quote(node.code) << ',' << l << ',' << csv_quote(parent) << ','
          << csv_quote(node.description) << '\n';
    }
  }
  write_text_file(path, out.str());
}

std::vector<ConceptId> map_level(const Ontology& ont, const ConceptId& c, int k) {
  if (k < 1 || k > ont.depth) throw ConfigError("map_level: level out of range");
  int idx = ont.find(c.level, c.code);
  if (idx < 0) {
    throw DataError(std::string("unknown concept '") + c.code + "' at level " +
                    std::to_string(c.level));
  }
  if (k == c.level) return {ont.id_of(k, idx)};
  if (k < c.level) {
    for (int l = c.level; l > k; --l) idx = ont.node(l, idx).parent;
    return {ont.id_of(k, idx)};
  }
  std::vector<int> frontier{idx};
  for (int l = c.level; l < k; ++l) {
    std::vector<int> next;
    for (int i : frontier) {
      const auto& ch = ont.node(l, i).children;
      next.insert(next.end(), ch.begin(), ch.end());
    }
    frontier = std::move(next);
  }
  std::sort(frontier.begin(), frontier.end());
  std::vector<ConceptId> out;
  out.reserve(frontier.size());
  for (int i : frontier) out.push_back(ont.id_of(k, i));
  return out;
}

std::vector<ConceptId> ancestor_chain(const Ontology& ont, const ConceptId& leaf) {
  if (leaf.level != ont.depth) throw DataError("ancestor_chain expects a leaf-level concept");
  int idx = ont.find(leaf.level, leaf.code);
  if (idx < 0) throw DataError("unknown concept '" + leaf.code + "'");
  std::vector<ConceptId> chain;
  chain.reserve(ont.depth - 1);
  for (int l = ont.depth; l > 1; --l) {
    idx = ont.node(l, idx).parent;
    chain.push_back(ont.id_of(l - 1, idx));
  }
  return chain;
}

OntologySet::OntologySet(std::vector<Ontology> onts) : onts_(std::move(onts)) {
  if (onts_.empty() || onts_.size() > 3) throw ConfigError("expected 1..3 ontologies");
  std::sort(onts_.begin(), onts_.end(),
            [](const Ontology& a, const Ontology& b) { return a.type < b.type; });
  for (size_t i = 1; i < onts_.size(); ++i) {
    if (onts_[i].type == onts_[i - 1].type)
      throw ConfigError("duplicate ontology type in set");
  }
  depth_ = onts_[0].depth;
  for (const auto& o : onts_) {
    if (o.depth != depth_) {
      throw DataError(std::string("ontology depth mismatch: ") + type_tag(o.type) + " has depth " +
                      std::to_string(o.depth) + ", expected " + std::to_string(depth_));
    }
  }

  level_nodes_.resize(depth_);
  level_offsets_.resize(depth_);
  for (int l = 1; l <= depth_; ++l) {
    auto& nodes = level_nodes_[l - 1];
    auto& offsets = level_offsets_[l - 1];
    for (int o = 0; o < static_cast<int>(onts_.size()); ++o) {
      offsets.push_back(static_cast<int>(nodes.size()));
      int n = onts_[o].level_size(l);
      for (int i = 0; i < n; ++i) nodes.push_back(NodeRef{o, i});
    }
  }

  ancestor_of_leaf_.assign(depth_, std::vector<int>(leaf_count(), -1));
  for (int uid = 0; uid < leaf_count(); ++uid) {
    NodeRef ref = level_nodes_[depth_ - 1][uid];
    int idx = ref.idx;
    ancestor_of_leaf_[depth_ - 1][uid] = uid;
    for (int l = depth_; l > 1; --l) {
      idx = onts_[ref.ont].node(l, idx).parent;
      ancestor_of_leaf_[l - 2][uid] = unified_id(l - 1, ref.ont, idx);
    }
  }
}

const Ontology* OntologySet::ontology_by_type(ConceptType t) const {
  for (const auto& o : onts_)
    if (o.type == t) return &o;
  return nullptr;
}

int OntologySet::level_count(int level) const {
  if (level < 1 || level > depth_) throw ConfigError("level out of range");
  return static_cast<int>(level_nodes_[level - 1].size());
}

int OntologySet::dx_leaf_count() const {
  const Ontology* dx = ontology_by_type(ConceptType::dx);
  return dx ? dx->level_size(depth_) : 0;
}

const OntologySet::NodeRef& OntologySet::node_ref(int level, int uid) const {
  return level_nodes_.at(level - 1).at(uid);
}

const OntologyNode& OntologySet::node(int level, int uid) const {
  const NodeRef& ref = node_ref(level, uid);
  return onts_[ref.ont].node(level, ref.idx);
}

ConceptId OntologySet::concept_at(int level, int uid) const {
  const NodeRef& ref = node_ref(level, uid);
  return onts_[ref.ont].id_of(level, ref.idx);
}

int OntologySet::unified_id(int level, int ont, int idx) const {
  return level_offsets_.at(level - 1).at(ont) + idx;
}

int OntologySet::find_leaf(ConceptType t, const std::string& code) const {
  for (int o = 0; o < static_cast<int>(onts_.size()); ++o) {
    if (onts_[o].type != t) continue;
    int idx = onts_[o].find(depth_, code);
    return idx < 0 ? -1 : unified_id(depth_, o, idx);
  }
  return -1;
}

int OntologySet::leaf_ancestor(int leaf_uid, int level) const {
  if (level < 1 || level > depth_) throw ConfigError("level out of range");
  return ancestor_of_leaf_.at(level - 1).at(leaf_uid);
}

}  // namespace medkg
