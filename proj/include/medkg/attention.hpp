#pragma once

#include <Eigen/Core>
#include <random>
#include <string>
#include <vector>

#include "medkg/tensor.hpp"

namespace medkg {

using ag::Matrix;
using ag::ParamStore;
using ag::Tensor;

inline constexpr double kAttentionLeakySlope = 0.2;

// One attention head over a directed adjacency mask. The score a node p
// assigns to a peer q decomposes as a_self . (W h_p) + a_peer . (W h_q).
struct GraphAttentionHead {
  Tensor W;       // d_in x d_head projection
  Tensor a_self;  // d_head x 1
  Tensor a_peer;  // d_head x 1
};

struct GraphAttentionParams {
  std::vector<GraphAttentionHead> heads;
  int d_in = 0;
  int d_out = 0;  // heads concatenated
};

// Registers the head parameters under `prefix` and returns handles to them.
// d_out must divide evenly into `heads` slices.
GraphAttentionParams make_graph_attention(ParamStore& params, const std::string& prefix,
                                          int d_in, int d_out, int heads, std::mt19937_64& rng);

// Multi-head attention step over `adj`: output row p mixes the projected
// features of {q : adj(p,q) != 0} with learned softmax weights, heads are
// concatenated, and an ELU is applied. Every row of `adj` needs at least one
// nonzero entry (self-loops satisfy this). `dropout_rate` > 0 drops entries
// of the attention matrices using masks drawn from `rng`. When `attn_probe`
// is given, the post-softmax (pre-dropout) attention matrix of every head is
// appended to it for diagnostics.
Tensor graph_attention_forward(const GraphAttentionParams& params, const Tensor& h,
                               const Matrix& adj, double dropout_rate, std::mt19937_64& rng,
                               std::vector<Matrix>* attn_probe = nullptr);

// One head of two-phase attention over a hypergraph: hyperedges first
// aggregate their member nodes (phase 1), then nodes aggregate their
// incident hyperedges (phase 2).
struct HypergraphAttentionHead {
  Tensor W;       // d_in x d_head projection
  Tensor a_edge;  // d_head x 1, phase-1 term from the mean-member edge query
  Tensor a_node;  // d_head x 1, phase-1 term from a member node
  Tensor b_node;  // d_head x 1, phase-2 term from the attending node
  Tensor b_edge;  // d_head x 1, phase-2 term from an aggregated edge
};

struct HypergraphAttentionParams {
  std::vector<HypergraphAttentionHead> heads;
  int d_in = 0;
  int d_out = 0;
};

HypergraphAttentionParams make_hypergraph_attention(ParamStore& params,
                                                    const std::string& prefix, int d_in,
                                                    int d_out, int heads, std::mt19937_64& rng);

// Appends a singleton hyperedge for every node with no incident edge so that
// phase 2 has a valid softmax row for each node.
Matrix ensure_membership(const Matrix& incidence);

// Two-phase hypergraph attention. `incidence` is nodes x edges with {0,1}
// entries; every node must belong to at least one edge (ensure_membership)
// and every edge must contain at least one node. `attn_probe` collects the
// phase-1 then phase-2 post-softmax matrices per head when given.
Tensor hypergraph_attention_forward(const HypergraphAttentionParams& params, const Tensor& h,
                                    const Matrix& incidence, double dropout_rate,
                                    std::mt19937_64& rng, std::vector<Matrix>* attn_probe = nullptr);

}  // namespace medkg
