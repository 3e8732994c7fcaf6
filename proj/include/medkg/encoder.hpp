#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "medkg/attention.hpp"
#include "medkg/embed.hpp"
#include "medkg/metakg.hpp"
#include "medkg/ontology.hpp"
#include "medkg/tensor.hpp"

namespace medkg {

struct EncoderConfig {
  int d = 256;
  int horizontal_heads = 4;
  int vertical_heads = 2;
  double horizontal_dropout = 0.1;
  double vertical_dropout = 0.2;
  int horizontal_rounds = 1;  // stacked per-level co-occurrence passes

  bool leaf_horizontal = true;    // co-occurrence pass at the leaf level
  bool parent_horizontal = true;  // co-occurrence passes at ancestor levels
  bool vertical = true;           // bottom-up child-to-parent propagation
  bool llm_init = true;           // prompt-derived init vs seeded uniform init
  bool leaf_uses_hypergraph = true;  // leaf pass on the visit hypergraph
  bool carry_children = false;    // keep updated child rows after a pair step
  bool attend_incoming = false;   // attend over in-edges instead of out-edges
  bool mix_pre_vertical = false;  // ancestor mix reads pre-vertical levels

  std::vector<double> tau{0.01};  // co-occurrence edge threshold (per level or broadcast)

  void validate() const;
};

// Seeded uniform init, entries in [-r, r] with r = sqrt(6 / (2 d)): every
// node vector is treated as a d-in/d-out unit regardless of level size.
std::vector<Matrix> random_level_embeddings(const OntologySet& onts, int d, std::uint64_t seed);

// Prompt-derived init straight from a provider (no cache): one row per node
// in unified level order.
std::vector<Matrix> provider_level_embeddings(const OntologySet& onts,
                                              EmbeddingProvider& provider,
                                              const std::string& task_name,
                                              PromptVariant variant, int d);

struct EncoderParams {
  EncoderConfig cfg;
  int depth = 0;
  std::vector<ag::Tensor> level_embeddings;  // "emb.l{level}", learnable
  // horizontal passes: [level-1][round]; empty vectors for bypassed levels
  std::vector<std::vector<GraphAttentionParams>> horizontal;
  std::vector<HypergraphAttentionParams> leaf_hyper;  // [round] when hypergraph mode
  std::vector<GraphAttentionParams> vertical;  // [s], pair (depth-s, depth-s-1)
  // ancestor-mix scoring MLP: energy = tanh([leaf ; chain] W + b) v
  ag::Tensor mix_w;  // 2d x d
  ag::Tensor mix_b;  // 1 x d
  ag::Tensor mix_v;  // d x 1
};

// Registers all trainable state in `store` ("emb.*", "hmp.*", "vmp.*",
// "mix.*") and validates the initial embeddings against the ontology shape.
// Bypassed stages register no parameters.
EncoderParams make_encoder(ag::ParamStore& store, const EncoderConfig& cfg,
                           const OntologySet& onts,
                           const std::vector<Matrix>& init_embeddings,
                           std::mt19937_64& rng);

// Per-level co-occurrence passes (levels independently; leaf level on the
// visit hypergraph when configured). Bypassed levels pass through untouched.
std::vector<ag::Tensor> hmp(const EncoderParams& params, const MetaKG& kg,
                            std::vector<ag::Tensor> levels, std::mt19937_64& rng, bool training,
                            std::vector<Matrix>* attn_probe = nullptr);

// Bottom-up pair propagation: for each adjacent pair, attention runs over
// the stacked [parent; child] node set and the updated parent rows feed the
// next pair. Identity when disabled.
std::vector<ag::Tensor> hgip(const EncoderParams& params, const MetaKG& kg,
                             std::vector<ag::Tensor> levels, std::mt19937_64& rng, bool training,
                             std::vector<Matrix>* attn_probe = nullptr);

struct GramResult {
  ag::Tensor z;   // leaves x d
  Matrix alphas;  // leaves x depth mixing weights (diagnostic copy)
};

// Top-down convex combination: each leaf mixes its own embedding with its
// ancestor chain, weighted by a learned softmax over per-level energies.
GramResult gram(const EncoderParams& params, const OntologySet& onts,
                const std::vector<ag::Tensor>& levels);

struct EncodeResult {
  ag::Tensor z;                    // final leaf matrix, leaves x d
  Matrix alphas;                   // leaves x depth
  std::vector<ag::Tensor> levels;  // post-propagation per-level embeddings
};

EncodeResult encode(const EncoderParams& params, const MetaKG& kg, const OntologySet& onts,
                    std::mt19937_64& rng, bool training,
                    std::vector<Matrix>* attn_probe = nullptr);

}  // namespace medkg
