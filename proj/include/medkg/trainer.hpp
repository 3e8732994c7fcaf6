#pragma once

// End-to-end training of the concept encoder + next-visit predictor: per
// batch the full embedding matrix is recomputed through the propagation
// stack so encoder and predictor parameters optimize jointly, with early
// stopping on validation ranking quality.

#include <string>
#include <vector>

#include "medkg/cohort.hpp"
#include "medkg/encoder.hpp"
#include "medkg/metakg.hpp"
#include "medkg/metrics.hpp"
#include "medkg/ontology.hpp"
#include "medkg/predictor.hpp"

namespace medkg {

struct TrainConfig {
  EncoderConfig encoder;
  PredictorConfig predictor;
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 100;
  int patience = 10;  // epochs without validation improvement before stopping
  int folds = 5;
  int fold = 0;
  double train_fraction = 1.0;  // patient-level subsample of the training split
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainResult {
  MetricsSummary test;
  std::vector<double> train_loss;  // mean loss per completed epoch
  std::vector<double> val_auprc;   // validation score per completed epoch
  double best_val_auprc = 0.0;
  int epochs_to_best = 0;  // 1-based epoch index of the best validation score
  int epochs_run = 0;
  bool diverged = false;
  int train_samples = 0;
  int train_patients = 0;
};

// Sample indices a configuration trains, validates, and tests on; the train
// list already reflects the configured patient-level subsample. Exposed so a
// later evaluation pass can rebuild exactly the splits a checkpoint saw.
struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

SplitIndices resolve_split(const std::vector<Sample>& samples, int n_patients,
                           const TrainConfig& cfg);

// Trains on the given cohort with the provided initial level embeddings
// (pass random_level_embeddings(...) for the no-language-model arm). When
// `trained` is non-null it must be an empty store; it receives every model
// parameter at the best validation snapshot, ready for checkpointing.
TrainResult train_model(const OntologySet& onts, const MetaKG& kg, const Cohort& cohort,
                        const std::vector<Matrix>& init_embeddings, const TrainConfig& cfg,
                        ag::ParamStore* trained = nullptr);

// Scores every sample with the current parameters (no dropout) and returns
// the metric bundle; band assignment comes from `label_frequency` computed
// on the training split.
MetricsSummary evaluate_samples(const EncoderParams& enc, const PredictorParams& pred,
                                const MetaKG& kg, const OntologySet& onts, const Cohort& cohort,
                                const std::vector<Sample>& samples,
                                const std::vector<int>& sample_indices,
                                const std::vector<double>& label_frequency);

// Occurrence frequency of each diagnosis label among the given samples'
// targets (fraction of samples containing the label).
std::vector<double> label_frequencies(const std::vector<Sample>& samples,
                                      const std::vector<int>& sample_indices, int n_labels);

// Multi-seed result bundle; `format_report` renders it with fixed precision
// and deterministic ordering so identical runs serialize byte-identically.
struct MetricsReport {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsSummary> per_seed;
  std::vector<int> epochs_to_best;
  std::vector<bool> diverged;
};

std::string format_report(const MetricsReport& report);

}  // namespace medkg
