#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "medkg/common.hpp"

namespace medkg {

enum class ConceptType { dx = 0, rx = 1, px = 2 };

const char* type_tag(ConceptType t);                 // "dx" / "rx" / "px"
std::optional<ConceptType> parse_type_tag(std::string_view tag);

// A concept is addressed by (type, code, level); the same code string may
// legally appear at several levels (padding repeats ragged leaves downward).
struct ConceptId {
  ConceptType type;
  std::string code;
  int level = 0;

  bool operator==(const ConceptId&) const = default;
};

struct OntologyNode {
  std::string code;
  std::string description;
  int parent = -1;             // index into the level above, -1 for roots
  std::vector<int> children;   // indices into the level below
  bool padded = false;         // synthesized to level a ragged leaf
};

// One code system as a uniform-depth forest. levels[l-1] holds level l in
// file order; leaves live at level `depth`.
struct Ontology {
  ConceptType type;
  std::string system_label;    // e.g. "ICD-9 diagnosis", used in prompts
  int depth = 0;
  std::vector<std::vector<OntologyNode>> levels;
  int padded_count = 0;
  int empty_description_count = 0;

  int level_size(int level) const;
  int find(int level, const std::string& code) const;  // -1 when absent
  const OntologyNode& node(int level, int idx) const;
  ConceptId id_of(int level, int idx) const;

 private:
  friend Ontology load_ontology(const std::string&, ConceptType, const std::string&);
  friend Ontology ontology_from_rows(
      ConceptType, const std::string&,
      const std::vector<std::array<std::string, 4>>&, const std::string&);
  std::vector<std::unordered_map<std::string, int>> lookup_;
};

// Reads a code-system csv (header: code,level,parent_code,description).
// Rejects structural defects: orphans, duplicate (code,level) rows, a node
// with two distinct parents, empty levels. Leaves shallower than the deepest
// level are padded by repeating the node downward so depth is uniform.
Ontology load_ontology(const std::string& path, ConceptType type,
                       const std::string& system_label = "");

// Same contract, rows already parsed (code, level, parent, description).
Ontology ontology_from_rows(ConceptType type, const std::string& system_label,
                            const std::vector<std::array<std::string, 4>>& rows,
                            const std::string& origin);

void write_ontology_csv(const Ontology& ont, const std::string& path);

// All concepts at level k related to c: ancestors for k < c.level, the node
// itself for k == c.level, descendants for k > c.level. Index order.
std::vector<ConceptId> map_level(const Ontology& ont, const ConceptId& c, int k);

// [P^(depth-1)(c), ..., P^(1)(c)] for a leaf, nearest ancestor first.
std::vector<ConceptId> ancestor_chain(const Ontology& ont, const ConceptId& leaf);

std::string default_system_label(ConceptType t);

// Up to three code systems (dx, rx, px) sharing one depth, with the unified
// per-level node numbering every downstream matrix row refers to:
// type order dx, rx, px, file order within each.
class OntologySet {
 public:
  explicit OntologySet(std::vector<Ontology> onts);

  int depth() const { return depth_; }
  int ontology_count() const { return static_cast<int>(onts_.size()); }
  const Ontology& ontology(int i) const { return onts_[i]; }
  const Ontology* ontology_by_type(ConceptType t) const;

  int level_count(int level) const;            // unified node count at level
  int leaf_count() const { return level_count(depth_); }
  int dx_leaf_count() const;                   // dx block is the index prefix

  struct NodeRef {
    int ont = -1;   // position in onts_
    int idx = -1;   // index within that ontology's level
  };
  const NodeRef& node_ref(int level, int uid) const;
  const OntologyNode& node(int level, int uid) const;
  ConceptId concept_at(int level, int uid) const;

  int unified_id(int level, int ont, int idx) const;
  int find_leaf(ConceptType t, const std::string& code) const;  // -1 missing

  // Unified id of the leaf's ancestor at `level` (the leaf itself at depth).
  int leaf_ancestor(int leaf_uid, int level) const;

 private:
  std::vector<Ontology> onts_;
  int depth_ = 0;
  std::vector<std::vector<NodeRef>> level_nodes_;
  std::vector<std::vector<int>> level_offsets_;       // [level-1][ont]
  std::vector<std::vector<int>> ancestor_of_leaf_;    // [level-1][leaf uid]
};

}  // namespace medkg
