#include "medkg/attention.hpp"

#include <utility>

#include "medkg/common.hpp"

namespace medkg {

namespace {

using ag::glorot_uniform;

int head_width(int d_out, int heads) {
  if (heads <= 0) throw ConfigError("attention: head count must be positive");
  if (d_out <= 0 || d_out % heads != 0)
    throw ConfigError("attention: output width " + std::to_string(d_out) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  return d_out / heads;
}

// scores(p, q) = self(p) + peer(q), built from two rank-one products
Tensor pairwise_scores(const Tensor& self_term, const Tensor& peer_term) {
  Tensor ones_rows = Tensor::constant(Matrix::Ones(self_term.rows(), 1));
  Tensor ones_cols = Tensor::constant(Matrix::Ones(peer_term.rows(), 1));
  return ag::add(ag::matmul(self_term, ag::transpose(ones_cols)),
                 ag::matmul(ones_rows, ag::transpose(peer_term)));
}

Tensor attend(const Tensor& scores, const Matrix& mask, double dropout_rate,
              std::mt19937_64& rng, std::vector<Matrix>* attn_probe) {
  Tensor attn = ag::masked_softmax(ag::leaky_relu(scores, kAttentionLeakySlope), mask);
  if (attn_probe) attn_probe->push_back(attn.value());
  if (dropout_rate > 0.0) attn = ag::dropout(attn, dropout_rate, rng);
  return attn;
}

}  // namespace

GraphAttentionParams make_graph_attention(ParamStore& params, const std::string& prefix,
                                          int d_in, int d_out, int heads, std::mt19937_64& rng) {
  int dh = head_width(d_out, heads);
  GraphAttentionParams out;
  out.d_in = d_in;
  out.d_out = d_out;
  for (int i = 0; i < heads; ++i) {
    std::string base = prefix + ".h" + std::to_string(i);
    GraphAttentionHead head;
    head.W = params.create(base + ".W", glorot_uniform(d_in, dh, rng));
    head.a_self = params.create(base + ".a_self", glorot_uniform(dh, 1, rng));
    head.a_peer = params.create(base + ".a_peer", glorot_uniform(dh, 1, rng));
    out.heads.push_back(std::move(head));
  }
  return out;
}

Tensor graph_attention_forward(const GraphAttentionParams& params, const Tensor& h,
                               const Matrix& adj, double dropout_rate, std::mt19937_64& rng,
                               std::vector<Matrix>* attn_probe) {
  Eigen::Index n = h.rows();
  if (h.cols() != params.d_in)
    throw ConfigError("graph attention: feature width " + std::to_string(h.cols()) +
                      " does not match configured input width " + std::to_string(params.d_in));
  if (adj.rows() != n || adj.cols() != n)
    throw ConfigError("graph attention: adjacency must be square over the node set");
  std::vector<Tensor> per_head;
  per_head.reserve(params.heads.size());
  for (const auto& head : params.heads) {
    Tensor th = ag::matmul(h, head.W);
    Tensor scores = pairwise_scores(ag::matmul(th, head.a_self), ag::matmul(th, head.a_peer));
    Tensor attn = attend(scores, adj, dropout_rate, rng, attn_probe);
    per_head.push_back(ag::elu(ag::matmul(attn, th)));
  }
  return per_head.size() == 1 ? per_head.front() : ag::concat_cols(per_head);
}

HypergraphAttentionParams make_hypergraph_attention(ParamStore& params,
                                                    const std::string& prefix, int d_in,
                                                    int d_out, int heads, std::mt19937_64& rng) {
  int dh = head_width(d_out, heads);
  HypergraphAttentionParams out;
  out.d_in = d_in;
  out.d_out = d_out;
  for (int i = 0; i < heads; ++i) {
    std::string base = prefix + ".h" + std::to_string(i);
    HypergraphAttentionHead head;
    head.W = params.create(base + ".W", glorot_uniform(d_in, dh, rng));
    head.a_edge = params.create(base + ".a_edge", glorot_uniform(dh, 1, rng));
    head.a_node = params.create(base + ".a_node", glorot_uniform(dh, 1, rng));
    head.b_node = params.create(base + ".b_node", glorot_uniform(dh, 1, rng));
    head.b_edge = params.create(base + ".b_edge", glorot_uniform(dh, 1, rng));
    out.heads.push_back(std::move(head));
  }
  return out;
}

Matrix ensure_membership(const Matrix& incidence) {
  std::vector<Eigen::Index> isolated;
  for (Eigen::Index r = 0; r < incidence.rows(); ++r)
    if (incidence.row(r).sum() == 0.0) isolated.push_back(r);
  if (isolated.empty()) return incidence;
  Matrix widened(incidence.rows(), incidence.cols() + static_cast<Eigen::Index>(isolated.size()));
  widened.leftCols(incidence.cols()) = incidence;
  widened.rightCols(static_cast<Eigen::Index>(isolated.size())).setZero();
  for (std::size_t i = 0; i < isolated.size(); ++i)
    widened(isolated[i], incidence.cols() + static_cast<Eigen::Index>(i)) = 1.0;
  return widened;
}

Tensor hypergraph_attention_forward(const HypergraphAttentionParams& params, const Tensor& h,
                                    const Matrix& incidence, double dropout_rate,
                                    std::mt19937_64& rng, std::vector<Matrix>* attn_probe) {
  Eigen::Index n = h.rows();
  if (h.cols() != params.d_in)
    throw ConfigError("hypergraph attention: feature width " + std::to_string(h.cols()) +
                      " does not match configured input width " + std::to_string(params.d_in));
  if (incidence.rows() != n)
    throw ConfigError("hypergraph attention: incidence rows must match the node count");
  if (incidence.cols() == 0)
    throw DataError("hypergraph attention: no hyperedges");
  // mean-of-members query per edge; an empty edge has no query
  Matrix edge_mean = incidence.transpose();
  for (Eigen::Index m = 0; m < edge_mean.rows(); ++m) {
    double members = edge_mean.row(m).sum();
    if (members == 0.0)
      throw DataError("hypergraph attention: hyperedge " + std::to_string(m) + " is empty");
    edge_mean.row(m) /= members;
  }
  Matrix member_mask = incidence.transpose();  // edges x nodes
  std::vector<Tensor> per_head;
  per_head.reserve(params.heads.size());
  for (const auto& head : params.heads) {
    Tensor th = ag::matmul(h, head.W);
    Tensor query = ag::matmul(Tensor::constant(edge_mean), th);
    // phase 1: each edge attends over its member nodes
    Tensor s1 = pairwise_scores(ag::matmul(query, head.a_edge), ag::matmul(th, head.a_node));
    Tensor edge_feat = ag::matmul(attend(s1, member_mask, dropout_rate, rng, attn_probe), th);
    // phase 2: each node attends over its incident edges
    Tensor s2 = pairwise_scores(ag::matmul(th, head.b_node), ag::matmul(edge_feat, head.b_edge));
    Tensor out = ag::matmul(attend(s2, incidence, dropout_rate, rng, attn_probe), edge_feat);
    per_head.push_back(ag::elu(out));
  }
  return per_head.size() == 1 ? per_head.front() : ag::concat_cols(per_head);
}

}  // namespace medkg
