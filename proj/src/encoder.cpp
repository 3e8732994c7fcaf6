#include "medkg/encoder.hpp"

#include <cmath>
#include <utility>

#include "medkg/common.hpp"

namespace medkg {

using ag::Tensor;

void EncoderConfig::validate() const {
  if (d < 1) throw ConfigError("encoder: d must be positive");
  if (horizontal_heads < 1 || vertical_heads < 1)
    throw ConfigError("encoder: head counts must be positive");
  if (d % horizontal_heads != 0)
    throw ConfigError("encoder: d = " + std::to_string(d) + " is not divisible by " +
                      std::to_string(horizontal_heads) + " horizontal heads");
  if (d % vertical_heads != 0)
    throw ConfigError("encoder: d = " + std::to_string(d) + " is not divisible by " +
                      std::to_string(vertical_heads) + " vertical heads");
  if (horizontal_dropout < 0.0 || horizontal_dropout >= 1.0 || vertical_dropout < 0.0 ||
      vertical_dropout >= 1.0)
    throw ConfigError("encoder: dropout rates must lie in [0, 1)");
  if (horizontal_rounds < 1) throw ConfigError("encoder: horizontal_rounds must be at least 1");
  if (tau.empty()) throw ConfigError("encoder: tau needs at least one entry");
  for (double t : tau)
    if (t < 0.0 || t > 1.0) throw ConfigError("encoder: tau entries must lie in [0, 1]");
}

std::vector<Matrix> random_level_embeddings(const OntologySet& onts, int d,
                                            std::uint64_t seed) {
  if (d < 1) throw ConfigError("embedding width must be at least 1");
  double r = std::sqrt(6.0 / (2.0 * d));
  std::vector<Matrix> out;
  for (int level = 1; level <= onts.depth(); ++level) {
    std::mt19937_64 rng(substream_seed(seed, "init-emb.l" + std::to_string(level)));
    std::uniform_real_distribution<double> unit(-r, r);
    Matrix m(onts.level_count(level), d);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = unit(rng);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Matrix> provider_level_embeddings(const OntologySet& onts,
                                              EmbeddingProvider& provider,
                                              const std::string& task_name,
                                              PromptVariant variant, int d) {
  std::vector<Matrix> out;
  for (int level = 1; level <= onts.depth(); ++level) {
    Matrix m(onts.level_count(level), d);
    for (int uid = 0; uid < onts.level_count(level); ++uid) {
      const OntologySet::NodeRef& ref = onts.node_ref(level, uid);
      PromptRecord rec =
          build_prompt(onts.ontology(ref.ont), level, ref.idx, task_name, variant);
      Eigen::VectorXd vec = provider.embed(rec.prompt_text, d);
      if (vec.size() != d)
        throw DataError("provider returned width " + std::to_string(vec.size()) +
                        ", expected " + std::to_string(d));
      m.row(uid) = vec.transpose();
    }
    out.push_back(std::move(m));
  }
  return out;
}

EncoderParams make_encoder(ag::ParamStore& store, const EncoderConfig& cfg,
                           const OntologySet& onts,
                           const std::vector<Matrix>& init_embeddings,
                           std::mt19937_64& rng) {
  cfg.validate();
  int depth = onts.depth();
  if (static_cast<int>(init_embeddings.size()) != depth)
    throw ConfigError("encoder: expected " + std::to_string(depth) +
                      " levels of initial embeddings, got " +
                      std::to_string(init_embeddings.size()));
  EncoderParams p;
  p.cfg = cfg;
  p.depth = depth;
  for (int level = 1; level <= depth; ++level) {
    const Matrix& init = init_embeddings[level - 1];
    if (init.rows() != onts.level_count(level) || init.cols() != cfg.d)
      throw ConfigError("encoder: level " + std::to_string(level) +
                        " init embeddings have shape " + std::to_string(init.rows()) + "x" +
                        std::to_string(init.cols()) + ", expected " +
                        std::to_string(onts.level_count(level)) + "x" + std::to_string(cfg.d));
    if (!init.allFinite())
      throw NumericalError("encoder: level " + std::to_string(level) +
                           " init embeddings contain non-finite values");
    p.level_embeddings.push_back(store.create("emb.l" + std::to_string(level), init));
  }

  p.horizontal.resize(static_cast<std::size_t>(depth));
  for (int level = 1; level <= depth; ++level) {
    bool leaf = level == depth;
    bool enabled = leaf ? cfg.leaf_horizontal : cfg.parent_horizontal;
    if (!enabled) continue;
    if (leaf && cfg.leaf_uses_hypergraph) {
      for (int r = 0; r < cfg.horizontal_rounds; ++r)
        p.leaf_hyper.push_back(make_hypergraph_attention(
            store, "hmp.leaf.r" + std::to_string(r), cfg.d, cfg.d, cfg.horizontal_heads, rng));
    } else {
      for (int r = 0; r < cfg.horizontal_rounds; ++r)
        p.horizontal[level - 1].push_back(make_graph_attention(
            store, "hmp.l" + std::to_string(level) + ".r" + std::to_string(r), cfg.d, cfg.d,
            cfg.horizontal_heads, rng));
    }
  }

  if (cfg.vertical) {
    for (int s = 0; s <= depth - 2; ++s)
      p.vertical.push_back(make_graph_attention(store, "vmp.s" + std::to_string(s), cfg.d,
                                                cfg.d, cfg.vertical_heads, rng));
  }

  p.mix_w = store.create("mix.W", ag::glorot_uniform(2 * cfg.d, cfg.d, rng));
  p.mix_b = store.create("mix.b", Matrix::Zero(1, cfg.d));
  p.mix_v = store.create("mix.v", ag::glorot_uniform(cfg.d, 1, rng));
  return p;
}

std::vector<Tensor> hmp(const EncoderParams& params, const MetaKG& kg,
                        std::vector<Tensor> levels, std::mt19937_64& rng, bool training,
                        std::vector<Matrix>* attn_probe) {
  const EncoderConfig& cfg = params.cfg;
  if (static_cast<int>(levels.size()) != params.depth)
    throw ConfigError("hmp: level count mismatch");
  double rate = training ? cfg.horizontal_dropout : 0.0;
  for (int level = 1; level <= params.depth; ++level) {
    bool leaf = level == params.depth;
    bool enabled = leaf ? cfg.leaf_horizontal : cfg.parent_horizontal;
    if (!enabled) continue;
    Tensor x = levels[level - 1];
    if (leaf && cfg.leaf_uses_hypergraph) {
      Matrix incidence = ensure_membership(kg.incidence);
      for (const auto& layer : params.leaf_hyper)
        x = hypergraph_attention_forward(layer, x, incidence, rate, rng, attn_probe);
    } else {
      const Matrix& adj = kg.horiz[static_cast<std::size_t>(level - 1)];
      Matrix mask = cfg.attend_incoming ? Matrix(adj.transpose()) : adj;
      for (const auto& layer : params.horizontal[static_cast<std::size_t>(level - 1)])
        x = graph_attention_forward(layer, x, mask, rate, rng, attn_probe);
    }
    levels[level - 1] = x;
  }
  return levels;
}

std::vector<Tensor> hgip(const EncoderParams& params, const MetaKG& kg,
                         std::vector<Tensor> levels, std::mt19937_64& rng, bool training,
                         std::vector<Matrix>* attn_probe) {
  const EncoderConfig& cfg = params.cfg;
  if (!cfg.vertical || params.depth < 2) return levels;
  if (static_cast<int>(levels.size()) != params.depth)
    throw ConfigError("hgip: level count mismatch");
  double rate = training ? cfg.vertical_dropout : 0.0;
  // deepest pair first: (depth, depth-1), then (depth-1, depth-2), ...
  for (int s = 0; s <= params.depth - 2; ++s) {
    int parent_level = params.depth - s - 1;
    int child_level = parent_level + 1;
    Eigen::Index np = levels[parent_level - 1].rows();
    Eigen::Index nc = levels[child_level - 1].rows();
    Tensor stacked =
        ag::concat_rows({levels[parent_level - 1], levels[child_level - 1]});
    const Matrix& adj = kg.vert[static_cast<std::size_t>(parent_level - 1)];
    Tensor updated =
        graph_attention_forward(params.vertical[static_cast<std::size_t>(s)], stacked, adj,
                                rate, rng, attn_probe);
    levels[parent_level - 1] = ag::slice_rows(updated, 0, np);
    if (cfg.carry_children) levels[child_level - 1] = ag::slice_rows(updated, np, nc);
  }
  return levels;
}

GramResult gram(const EncoderParams& params, const OntologySet& onts,
                const std::vector<Tensor>& levels) {
  if (static_cast<int>(levels.size()) != params.depth)
    throw ConfigError("ancestor mix: level count mismatch");
  int depth = params.depth;
  int leaves = onts.leaf_count();
  const Tensor& leaf = levels[static_cast<std::size_t>(depth - 1)];
  if (leaf.rows() != leaves) throw ConfigError("ancestor mix: leaf row count mismatch");
  int d = params.cfg.d;
  Tensor ones_rows = Tensor::constant(Matrix::Ones(leaves, 1));
  Tensor bias = ag::matmul(ones_rows, params.mix_b);

  std::vector<Tensor> chain;  // per level: the leaf's ancestor-or-self rows
  std::vector<Tensor> energies;
  chain.reserve(static_cast<std::size_t>(depth));
  energies.reserve(static_cast<std::size_t>(depth));
  for (int level = 1; level <= depth; ++level) {
    Tensor anc;
    if (level == depth) {
      anc = leaf;
    } else {
      std::vector<int> rows(static_cast<std::size_t>(leaves));
      for (int i = 0; i < leaves; ++i) rows[static_cast<std::size_t>(i)] =
          onts.leaf_ancestor(i, level);
      anc = ag::embedding_gather(levels[static_cast<std::size_t>(level - 1)], rows);
    }
    Tensor paired = ag::concat_cols({leaf, anc});
    Tensor hidden = ag::tanh_op(ag::add(ag::matmul(paired, params.mix_w), bias));
    energies.push_back(ag::matmul(hidden, params.mix_v));
    chain.push_back(std::move(anc));
  }

  Tensor energy_table = ag::concat_cols(energies);  // leaves x depth
  Tensor alphas = ag::masked_softmax(energy_table, Matrix::Ones(leaves, depth));
  Tensor ones_d = Tensor::constant(Matrix::Ones(1, d));
  Tensor z;
  for (int level = 1; level <= depth; ++level) {
    Tensor weight = ag::matmul(ag::slice_cols(alphas, level - 1, 1), ones_d);
    Tensor term = ag::mul(weight, chain[static_cast<std::size_t>(level - 1)]);
    z = level == 1 ? term : ag::add(z, term);
  }
  return {std::move(z), alphas.value()};
}

EncodeResult encode(const EncoderParams& params, const MetaKG& kg, const OntologySet& onts,
                    std::mt19937_64& rng, bool training, std::vector<Matrix>* attn_probe) {
  std::vector<Tensor> levels = params.level_embeddings;
  levels = hmp(params, kg, std::move(levels), rng, training, attn_probe);
  std::vector<Tensor> pre_vertical = levels;
  levels = hgip(params, kg, std::move(levels), rng, training, attn_probe);
  GramResult mixed =
      gram(params, onts, params.cfg.mix_pre_vertical ? pre_vertical : levels);
  EncodeResult out;
  out.z = std::move(mixed.z);
  out.alphas = std::move(mixed.alphas);
  out.levels = std::move(levels);
  return out;
}

}  // namespace medkg
