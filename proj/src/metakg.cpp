#include "medkg/metakg.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace medkg {

Matrix count_leaf_cooccurrence(const Cohort& cohort, int n_leaves) {
  Matrix q = Matrix::Zero(n_leaves, n_leaves);
  for (const auto& rec : cohort.records) {
    for (const auto& visit : rec.visits) {
      for (int i : visit.codes) {
        if (i < 0 || i >= n_leaves) throw DataError("visit code out of leaf range");
        for (int j : visit.codes) q(i, j) += 1.0;
      }
    }
  }
  return q;
}

Matrix aggregate_counts(const Matrix& leaf_counts, const OntologySet& onts, int level) {
  int n_leaves = onts.leaf_count();
  if (leaf_counts.rows() != n_leaves || leaf_counts.cols() != n_leaves)
    throw ConfigError("aggregate_counts: leaf matrix shape mismatch");
  if (level < 1 || level > onts.depth()) throw ConfigError("aggregate_counts: level out of range");
  // selection matrix: leaf i -> its ancestor at `level`
  Matrix s = Matrix::Zero(n_leaves, onts.level_count(level));
  for (int i = 0; i < n_leaves; ++i) s(i, onts.leaf_ancestor(i, level)) = 1.0;
  return s.transpose() * leaf_counts * s;
}

Matrix to_probability(const Matrix& counts) {
  Matrix p = counts;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    double sum = p.row(r).sum();
    if (sum > 0.0) p.row(r) /= sum;
  }
  return p;
}

Matrix binarize(const Matrix& probs, double tau) {
  if (probs.rows() != probs.cols()) throw ConfigError("binarize expects a square matrix");
  Matrix a = (probs.array() >= tau).cast<double>();
  a.diagonal().setOnes();
  return a;
}

Matrix vertical_adjacency(const OntologySet& onts, int parent_level) {
  if (parent_level < 1 || parent_level >= onts.depth())
    throw ConfigError("vertical_adjacency: parent level out of range");
  int np = onts.level_count(parent_level);
  int nc = onts.level_count(parent_level + 1);
  Matrix a = Matrix::Identity(np + nc, np + nc);
  for (int c = 0; c < nc; ++c) {
    const auto& ref = onts.node_ref(parent_level + 1, c);
    int pidx = onts.ontology(ref.ont).node(parent_level + 1, ref.idx).parent;
    int p = onts.unified_id(parent_level, ref.ont, pidx);
    a(p, np + c) = 1.0;
  }
  return a;
}

Matrix hypergraph_incidence(const Cohort& cohort, int n_leaves) {
  int m = cohort.total_visits();
  Matrix h = Matrix::Zero(n_leaves, m);
  int col = 0;
  for (const auto& rec : cohort.records) {
    for (const auto& visit : rec.visits) {
      if (visit.codes.empty())
        throw DataError("patient " + rec.patient_id + " has an empty visit (empty hyperedge)");
      for (int i : visit.codes) h(i, col) = 1.0;
      ++col;
    }
  }
  return h;
}

MetaKG build_metakg(const OntologySet& onts, const Cohort& cohort,
                    const std::vector<double>& tau) {
  MetaKG kg;
  kg.depth = onts.depth();
  if (tau.size() == 1) {
    kg.tau.assign(kg.depth, tau[0]);
  } else if (static_cast<int>(tau.size()) == kg.depth) {
    kg.tau = tau;
  } else {
    throw ConfigError("tau needs 1 or depth entries, got " + std::to_string(tau.size()));
  }
  for (double t : kg.tau) {
    if (t < 0.0 || t > 1.0) throw ConfigError("tau must be in [0,1]");
  }

  Matrix leaf = count_leaf_cooccurrence(cohort, onts.leaf_count());
  kg.counts.resize(kg.depth);
  kg.probs.resize(kg.depth);
  kg.horiz.resize(kg.depth);
  kg.counts[kg.depth - 1] = leaf;
  for (int l = 1; l < kg.depth; ++l) kg.counts[l - 1] = aggregate_counts(leaf, onts, l);
  for (int l = 1; l <= kg.depth; ++l) {
    kg.probs[l - 1] = to_probability(kg.counts[l - 1]);
    kg.horiz[l - 1] = binarize(kg.probs[l - 1], kg.tau[l - 1]);
  }
  for (int l = 1; l < kg.depth; ++l) kg.vert.push_back(vertical_adjacency(onts, l));
  kg.incidence = hypergraph_incidence(cohort, onts.leaf_count());
  return kg;
}

void export_matrix_coo(const Matrix& m, const std::string& path) {
  std::ostringstream out;
  out << "dims " << m.rows() << ' ' << m.cols() << '\n';
  char buf[64];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) == 0.0) continue;
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      out << r << ' ' << c << ' ' << buf << '\n';
    }
  }
  write_text_file(path, out.str());
}

Matrix import_matrix_coo(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open matrix file: " + path);
  std::string word;
  long rows = 0, cols = 0;
  if (!(in >> word >> rows >> cols) || word != "dims")
    throw DataError(path + ": expected 'dims R C' header");
  if (rows < 0 || cols < 0) throw DataError(path + ": negative dims");
  Matrix m = Matrix::Zero(rows, cols);
  long r, c;
  double v;
  while (in >> r >> c >> v) {
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      throw DataError(path + ": entry out of bounds");
    m(r, c) = v;
  }
  return m;
}

void export_metakg(const MetaKG& kg, const OntologySet& onts, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int l = 1; l <= kg.depth; ++l) {
    std::string suffix = "_l" + std::to_string(l) + ".coo";
    export_matrix_coo(kg.counts[l - 1], dir + "/counts" + suffix);
    export_matrix_coo(kg.probs[l - 1], dir + "/probs" + suffix);
    export_matrix_coo(kg.horiz[l - 1], dir + "/adj_horizontal" + suffix);
  }
  for (int l = 1; l < kg.depth; ++l) {
    export_matrix_coo(kg.vert[l - 1], dir + "/adj_vertical_l" + std::to_string(l) + ".coo");
  }
  export_matrix_coo(kg.incidence, dir + "/incidence.coo");

  // node tables: one line per unified node id
  for (int l = 1; l <= kg.depth; ++l) {
    std::ostringstream out;
    for (int u = 0; u < onts.level_count(l); ++u) {
      ConceptId id = onts.concept_at(l, u);
      out << u << '\t' << type_tag(id.type) << '\t' << id.code << '\n';
    }
    write_text_file(dir + "/nodes_l" + std::to_string(l) + ".tsv", out.str());
  }

  // self-describing header so the directory can be read back on its own
  std::ostringstream meta;
  meta << "depth " << kg.depth << '\n';
  meta << "tau";
  char buf[64];
  for (double t : kg.tau) {
    std::snprintf(buf, sizeof(buf), "%.17g", t);
    meta << ' ' << buf;
  }
  meta << '\n' << "levels";
  for (int l = 1; l <= kg.depth; ++l) meta << ' ' << onts.level_count(l);
  meta << '\n' << "visits " << kg.incidence.cols() << '\n';
  write_text_file(dir + "/meta.txt", meta.str());
}

MetaKG import_metakg(const std::string& dir, const OntologySet& onts) {
  std::ifstream meta(dir + "/meta.txt");
  if (!meta)
    throw DataError("graph directory " + dir + " has no meta.txt; run build-metakg first");
  MetaKG kg;
  std::string key;
  if (!(meta >> key >> kg.depth) || key != "depth" || kg.depth < 1)
    throw DataError(dir + "/meta.txt: expected 'depth N'");
  if (kg.depth != onts.depth())
    throw ConfigError("graph depth " + std::to_string(kg.depth) +
                      " does not match ontology depth " + std::to_string(onts.depth()));
  if (!(meta >> key) || key != "tau") throw DataError(dir + "/meta.txt: expected tau line");
  for (int l = 0; l < kg.depth; ++l) {
    double t;
    if (!(meta >> t)) throw DataError(dir + "/meta.txt: tau list shorter than depth");
    kg.tau.push_back(t);
  }
  if (!(meta >> key) || key != "levels") throw DataError(dir + "/meta.txt: expected levels line");
  for (int l = 1; l <= kg.depth; ++l) {
    int n;
    if (!(meta >> n)) throw DataError(dir + "/meta.txt: levels list shorter than depth");
    if (n != onts.level_count(l))
      throw ConfigError("graph level " + std::to_string(l) + " has " + std::to_string(n) +
                        " nodes but the ontologies define " + std::to_string(onts.level_count(l)));
  }

  kg.counts.resize(static_cast<std::size_t>(kg.depth));
  kg.probs.resize(static_cast<std::size_t>(kg.depth));
  kg.horiz.resize(static_cast<std::size_t>(kg.depth));
  for (int l = 1; l <= kg.depth; ++l) {
    std::string suffix = "_l" + std::to_string(l) + ".coo";
    kg.counts[l - 1] = import_matrix_coo(dir + "/counts" + suffix);
    kg.probs[l - 1] = import_matrix_coo(dir + "/probs" + suffix);
    kg.horiz[l - 1] = import_matrix_coo(dir + "/adj_horizontal" + suffix);
    const Eigen::Index n = onts.level_count(l);
    for (const Matrix* m : {&kg.counts[l - 1], &kg.probs[l - 1], &kg.horiz[l - 1]})
      if (m->rows() != n || m->cols() != n)
        throw DataError(dir + ": level " + std::to_string(l) + " matrix is " +
                        std::to_string(m->rows()) + "x" + std::to_string(m->cols()) +
                        ", expected " + std::to_string(n) + " square");
  }
  for (int l = 1; l < kg.depth; ++l) {
    Matrix v = import_matrix_coo(dir + "/adj_vertical_l" + std::to_string(l) + ".coo");
    const Eigen::Index n = onts.level_count(l) + onts.level_count(l + 1);
    if (v.rows() != n || v.cols() != n)
      throw DataError(dir + ": vertical adjacency " + std::to_string(l) + " has wrong shape");
    kg.vert.push_back(std::move(v));
  }
  kg.incidence = import_matrix_coo(dir + "/incidence.coo");
  if (kg.incidence.rows() != onts.leaf_count())
    throw DataError(dir + ": incidence row count does not match the leaf vocabulary");
  return kg;
}

}  // namespace medkg
