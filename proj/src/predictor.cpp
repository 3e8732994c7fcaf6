#include "medkg/predictor.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "medkg/common.hpp"

namespace medkg {

using ag::glorot_uniform;
using ag::Tensor;

void PredictorConfig::validate() const {
  if (d < 1) throw ConfigError("predictor: width must be positive");
  if (blocks < 1) throw ConfigError("predictor: need at least one attention block");
  if (ffn_width < 1) throw ConfigError("predictor: feed-forward width must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("predictor: dropout must be in [0, 1)");
  if (max_visits < 1) throw ConfigError("predictor: max_visits must be positive");
}

PredictorParams make_predictor(ag::ParamStore& store, const PredictorConfig& cfg, int n_labels,
                               std::mt19937_64& rng) {
  cfg.validate();
  if (n_labels < 1) throw ConfigError("predictor: need at least one label");
  PredictorParams p;
  p.cfg = cfg;
  p.pos = store.create("pred.pos", glorot_uniform(cfg.max_visits, cfg.d, rng));
  for (int b = 0; b < cfg.blocks; ++b) {
    std::string prefix = "pred.b" + std::to_string(b) + ".";
    AttentionBlock blk;
    blk.wq = store.create(prefix + "wq", glorot_uniform(cfg.d, cfg.d, rng));
    blk.wk = store.create(prefix + "wk", glorot_uniform(cfg.d, cfg.d, rng));
    blk.wv = store.create(prefix + "wv", glorot_uniform(cfg.d, cfg.d, rng));
    blk.wo = store.create(prefix + "wo", glorot_uniform(cfg.d, cfg.d, rng));
    blk.w1 = store.create(prefix + "ffn.w1", glorot_uniform(cfg.d, cfg.ffn_width, rng));
    blk.b1 = store.create(prefix + "ffn.b1", Matrix::Zero(1, cfg.ffn_width));
    blk.w2 = store.create(prefix + "ffn.w2", glorot_uniform(cfg.ffn_width, cfg.d, rng));
    blk.b2 = store.create(prefix + "ffn.b2", Matrix::Zero(1, cfg.d));
    p.blocks.push_back(blk);
  }
  p.head_w = store.create("pred.head.w", glorot_uniform(n_labels, cfg.d, rng));
  p.head_b = store.create("pred.head.b", Matrix::Zero(1, n_labels));
  return p;
}

Tensor visit_sequence(const Tensor& z, const PatientRecord& patient, int prefix_len,
                      int* empty_visits) {
  if (prefix_len < 1) throw ConfigError("visit_sequence: prefix must contain at least one visit");
  if (prefix_len > static_cast<int>(patient.visits.size()))
    throw ConfigError("visit_sequence: prefix longer than the patient's history");
  const Eigen::Index n_leaves = z.value().rows();
  Matrix multi_hot = Matrix::Zero(prefix_len, n_leaves);
  int empties = 0;
  for (int t = 0; t < prefix_len; ++t) {
    const auto& codes = patient.visits[static_cast<std::size_t>(t)].codes;
    if (codes.empty()) ++empties;
    for (int c : codes) {
      if (c < 0 || c >= n_leaves)
        throw DataError("visit_sequence: code " + std::to_string(c) +
                        " has no embedding row (embedding matrix has " +
                        std::to_string(n_leaves) + " rows)");
      multi_hot(t, c) = 1.0;  // multi-hot: a repeated code still counts once
    }
  }
  if (empty_visits) *empty_visits = empties;
  return ag::matmul(Tensor::constant(multi_hot), z);
}

namespace {

// Broadcasts a 1 x w bias over n rows.
Tensor broadcast_rows(const Tensor& bias, Eigen::Index n) {
  return ag::matmul(Tensor::constant(Matrix::Ones(n, 1)), bias);
}

}  // namespace

Tensor patient_state(const PredictorParams& params, const Tensor& visits, std::mt19937_64& rng,
                     bool training) {
  const Eigen::Index t = visits.value().rows();
  const auto& cfg = params.cfg;
  if (visits.value().cols() != cfg.d) throw ConfigError("patient_state: visit width mismatch");
  if (t > cfg.max_visits)
    throw ConfigError("patient_state: sequence of " + std::to_string(t) +
                      " visits exceeds max_visits " + std::to_string(cfg.max_visits));
  std::vector<int> positions(static_cast<std::size_t>(t));
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = ag::add(visits, ag::embedding_gather(params.pos, positions));
  const Matrix full = Matrix::Ones(t, t);
  const double rate = training ? cfg.dropout : 0.0;
  for (const auto& blk : params.blocks) {
    Tensor q = ag::matmul(x, blk.wq);
    Tensor k = ag::matmul(x, blk.wk);
    Tensor v = ag::matmul(x, blk.wv);
    Tensor scores = ag::scale(ag::matmul(q, ag::transpose(k)), 1.0 / std::sqrt(double(cfg.d)));
    Tensor attended = ag::matmul(ag::masked_softmax(scores, full), v);
    x = ag::add(x, ag::dropout(ag::matmul(attended, blk.wo), rate, rng));
    Tensor hidden = ag::elu(ag::add(ag::matmul(x, blk.w1), broadcast_rows(blk.b1, t)));
    Tensor ffn = ag::add(ag::matmul(hidden, blk.w2), broadcast_rows(blk.b2, t));
    x = ag::add(x, ag::dropout(ffn, rate, rng));
  }
  return ag::mean_rows(x);
}

Tensor predict_logits(const PredictorParams& params, const Tensor& z,
                      const PatientRecord& patient, int prefix_len, std::mt19937_64& rng,
                      bool training, int* empty_visits) {
  Tensor visits = visit_sequence(z, patient, prefix_len, empty_visits);
  Tensor h = patient_state(params, visits, rng, training);
  return ag::add(ag::matmul(h, ag::transpose(params.head_w)), params.head_b);
}

Matrix target_row(const Sample& sample, int n_labels) {
  Matrix y = Matrix::Zero(1, n_labels);
  for (int c : sample.target_dx) {
    if (c < 0 || c >= n_labels)
      throw DataError("target label " + std::to_string(c) + " outside the diagnosis range");
    y(0, c) = 1.0;
  }
  return y;
}

}  // namespace medkg
