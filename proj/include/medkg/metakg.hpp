#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "medkg/cohort.hpp"
#include "medkg/ontology.hpp"

namespace medkg {

using Matrix = Eigen::MatrixXd;

// Leaf-level co-occurrence over visits: ordered pairs, so the matrix is
// symmetric and the diagonal holds per-code visit counts.
Matrix count_leaf_cooccurrence(const Cohort& cohort, int n_leaves);

// Roll leaf counts up to `level`: entry (p,q) sums leaf counts over the leaf
// descendants of p and q. Total mass is preserved.
Matrix aggregate_counts(const Matrix& leaf_counts, const OntologySet& onts, int level);

// Row-normalized conditional co-occurrence; all-zero rows stay zero.
Matrix to_probability(const Matrix& counts);

// Directed adjacency: edge p->q where P(p,q) >= tau, plus mandatory
// self-loops. Asymmetric in general because rows are normalized.
Matrix binarize(const Matrix& probs, double tau);

// Adjacency over the concatenated [parents at parent_level; children at
// parent_level+1] node set: one child->parent edge per child (parents attend
// over their children) plus self-loops on every node.
Matrix vertical_adjacency(const OntologySet& onts, int parent_level);

// Visit hypergraph: rows = leaves, one column per visit in record order.
Matrix hypergraph_incidence(const Cohort& cohort, int n_leaves);

struct MetaKG {
  int depth = 0;
  std::vector<Matrix> counts;  // [l-1] = Q^(l), unified level index
  std::vector<Matrix> probs;   // [l-1] = P^(l)
  std::vector<Matrix> horiz;   // [l-1] = A_h^(l) with self-loops
  std::vector<Matrix> vert;    // [l-1] over [level l ; level l+1], l = 1..depth-1
  Matrix incidence;            // leaves x visits
  std::vector<double> tau;     // per level, as applied
};

// tau: one entry broadcast to every level, or exactly `depth` entries.
MetaKG build_metakg(const OntologySet& onts, const Cohort& cohort,
                    const std::vector<double>& tau = {0.01});

// Coordinate-list text: "dims R C" header then "row col value" per nonzero.
void export_matrix_coo(const Matrix& m, const std::string& path);
Matrix import_matrix_coo(const std::string& path);
void export_metakg(const MetaKG& kg, const OntologySet& onts, const std::string& dir);

// Reads back an exported graph directory; level shapes are validated against
// the ontology set it is meant to accompany.
MetaKG import_metakg(const std::string& dir, const OntologySet& onts);

}  // namespace medkg
