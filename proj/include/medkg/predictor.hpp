#pragma once

// Sequential next-visit diagnosis predictor. Each visit is embedded as the
// sum of its member-code rows of the concept embedding matrix, the visit
// sequence runs through learned positional addition and self-attention
// blocks, and a mean-pooled patient state feeds a multi-label sigmoid head
// over diagnosis leaves.

#include <random>
#include <vector>

#include "medkg/cohort.hpp"
#include "medkg/tensor.hpp"

namespace medkg {

using ag::Matrix;

struct PredictorConfig {
  int d = 32;          // model width; must equal the concept embedding width
  int blocks = 1;      // self-attention blocks
  int ffn_width = 64;  // hidden width of the per-position feed-forward
  double dropout = 0.0;
  int max_visits = 16;  // rows of the learned positional table

  void validate() const;
};

struct AttentionBlock {
  ag::Tensor wq, wk, wv, wo;  // d x d projections
  ag::Tensor w1, b1;          // d x ffn, 1 x ffn
  ag::Tensor w2, b2;          // ffn x d, 1 x d
};

struct PredictorParams {
  PredictorConfig cfg;
  ag::Tensor pos;  // max_visits x d learned positional rows
  std::vector<AttentionBlock> blocks;
  ag::Tensor head_w;  // n_labels x d
  ag::Tensor head_b;  // 1 x n_labels
};

// Registers all predictor parameters in the store under the "pred." prefix.
PredictorParams make_predictor(ag::ParamStore& store, const PredictorConfig& cfg, int n_labels,
                               std::mt19937_64& rng);

// Rows 0..prefix_len-1 are the visit vectors v_t = sum of z rows for the
// visit's codes. An empty visit contributes a zero row; when `empty_visits`
// is given it receives the count so callers can warn.
ag::Tensor visit_sequence(const ag::Tensor& z, const PatientRecord& patient, int prefix_len,
                          int* empty_visits = nullptr);

// Patient state: positional addition, attention blocks, mean pool. Input is
// a prefix_len x d visit sequence.
ag::Tensor patient_state(const PredictorParams& params, const ag::Tensor& visits,
                         std::mt19937_64& rng, bool training);

// 1 x n_labels pre-sigmoid scores for the visit after the prefix.
ag::Tensor predict_logits(const PredictorParams& params, const ag::Tensor& z,
                          const PatientRecord& patient, int prefix_len, std::mt19937_64& rng,
                          bool training, int* empty_visits = nullptr);

// Multi-hot 1 x n_labels target row for a sample.
Matrix target_row(const Sample& sample, int n_labels);

}  // namespace medkg
