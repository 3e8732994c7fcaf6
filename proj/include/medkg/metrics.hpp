#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace medkg {

using Matrix = Eigen::MatrixXd;

// |top-k(scores) ∩ positives| / min(k, |positives|). Ties in the scores are
// broken toward the lower label index. `positives` holds label indices.
double acc_at_k(const Eigen::VectorXd& scores, const std::vector<int>& positives, int k);

// Micro-averaged average precision over all (sample, label) cells: cells are
// ranked by score descending, ties kept in flattened sample-major order, and
// precision is accumulated at every positive. Throws DataError when the
// label matrix has no positives.
double micro_auprc(const Matrix& scores, const Matrix& labels);

// Micro F1 at a fixed decision threshold (score >= threshold counts as a
// predicted positive). Returns 0 when there are neither predicted nor true
// positives.
double micro_f1(const Matrix& scores, const Matrix& labels, double threshold = 0.5);

// Quartile banding of labels by frequency rank, rarest first; ties broken by
// label index. Returns band index (0..bands-1) per label; the bands
// partition the label set with sizes differing by at most one.
std::vector<int> frequency_bands(const std::vector<double>& label_frequency, int bands = 4);

// Micro AUPRC restricted to the labels of each band. A band whose labels
// carry no positives yields nullopt.
std::vector<std::optional<double>> stratified_auprc(const Matrix& scores, const Matrix& labels,
                                                    const std::vector<int>& band_of_label,
                                                    int bands = 4);

// One evaluation pass over a sample set.
struct MetricsSummary {
  double auprc = 0.0;
  double f1 = 0.0;
  std::map<int, double> acc_at;                   // k -> mean over samples
  std::vector<std::optional<double>> band_auprc;  // rarest band first
  int n_samples = 0;
};

// Mean with a normal-approximation 95% half-width (1.96 s / sqrt(n));
// half-width is 0 for n < 2.
struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;
};

MeanCi mean_ci(const std::vector<double>& values);

}  // namespace medkg
