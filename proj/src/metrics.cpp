#include "medkg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "medkg/common.hpp"

namespace medkg {

double acc_at_k(const Eigen::VectorXd& scores, const std::vector<int>& positives, int k) {
  if (k < 1) throw ConfigError("acc_at_k: k must be at least 1");
  if (positives.empty()) throw ConfigError("acc_at_k: sample has no true labels");
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores(a) > scores(b); });
  std::vector<char> is_pos(static_cast<std::size_t>(scores.size()), 0);
  for (int p : positives) {
    if (p < 0 || p >= scores.size()) throw ConfigError("acc_at_k: label index out of range");
    is_pos[static_cast<std::size_t>(p)] = 1;
  }
  int take = std::min<int>(k, static_cast<int>(order.size()));
  int hit = 0;
  for (int i = 0; i < take; ++i) hit += is_pos[static_cast<std::size_t>(order[i])];
  return static_cast<double>(hit) /
         static_cast<double>(std::min<std::size_t>(static_cast<std::size_t>(k),
                                                   positives.size()));
}

namespace {

void check_binary_labels(const Matrix& labels) {
  for (Eigen::Index r = 0; r < labels.rows(); ++r)
    for (Eigen::Index c = 0; c < labels.cols(); ++c)
      if (labels(r, c) != 0.0 && labels(r, c) != 1.0)
        throw DataError("labels must be 0 or 1");
}

}  // namespace

double micro_auprc(const Matrix& scores, const Matrix& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw ConfigError("micro_auprc: shape mismatch");
  check_binary_labels(labels);
  const Eigen::Index cells = scores.size();
  double total_pos = labels.sum();
  if (total_pos == 0.0) throw DataError("micro_auprc: no positive labels");

  // flatten sample-major so ties resolve by (sample, label) order
  std::vector<Eigen::Index> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto score_at = [&](Eigen::Index flat) {
    return scores(flat / scores.cols(), flat % scores.cols());
  };
  auto label_at = [&](Eigen::Index flat) {
    return labels(flat / labels.cols(), flat % labels.cols());
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return score_at(a) > score_at(b); });
  double ap = 0.0;
  double seen_pos = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (label_at(order[rank]) == 1.0) {
      seen_pos += 1.0;
      ap += seen_pos / static_cast<double>(rank + 1);
    }
  }
  return ap / total_pos;
}

double micro_f1(const Matrix& scores, const Matrix& labels, double threshold) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw ConfigError("micro_f1: shape mismatch");
  check_binary_labels(labels);
  double tp = 0, fp = 0, fn = 0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      bool pred = scores(r, c) >= threshold;
      bool truth = labels(r, c) == 1.0;
      if (pred && truth)
        tp += 1;
      else if (pred)
        fp += 1;
      else if (truth)
        fn += 1;
    }
  }
  double denom = 2 * tp + fp + fn;
  return denom == 0.0 ? 0.0 : 2 * tp / denom;
}

std::vector<int> frequency_bands(const std::vector<double>& label_frequency, int bands) {
  if (bands < 1) throw ConfigError("frequency_bands: need at least one band");
  const std::size_t n = label_frequency.size();
  if (n == 0) throw ConfigError("frequency_bands: empty label set");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return label_frequency[static_cast<std::size_t>(a)] <
           label_frequency[static_cast<std::size_t>(b)];
  });
  std::vector<int> band(n, 0);
  for (std::size_t rank = 0; rank < n; ++rank)
    band[static_cast<std::size_t>(order[rank])] =
        static_cast<int>(rank * static_cast<std::size_t>(bands) / n);
  return band;
}

std::vector<std::optional<double>> stratified_auprc(const Matrix& scores, const Matrix& labels,
                                                    const std::vector<int>& band_of_label,
                                                    int bands) {
  if (static_cast<Eigen::Index>(band_of_label.size()) != scores.cols())
    throw ConfigError("stratified_auprc: band assignment does not cover the label set");
  std::vector<std::optional<double>> out;
  for (int b = 0; b < bands; ++b) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index c = 0; c < scores.cols(); ++c)
      if (band_of_label[static_cast<std::size_t>(c)] == b) cols.push_back(c);
    if (cols.empty()) {
      out.push_back(std::nullopt);
      continue;
    }
    Matrix s(scores.rows(), static_cast<Eigen::Index>(cols.size()));
    Matrix y(labels.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
      s.col(static_cast<Eigen::Index>(i)) = scores.col(cols[i]);
      y.col(static_cast<Eigen::Index>(i)) = labels.col(cols[i]);
    }
    if (y.sum() == 0.0)
      out.push_back(std::nullopt);
    else
      out.push_back(micro_auprc(s, y));
  }
  return out;
}

MeanCi mean_ci(const std::vector<double>& values) {
  MeanCi ci;
  if (values.empty()) return ci;
  double sum = std::accumulate(values.begin(), values.end(), 0.0);
  ci.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return ci;
  double ss = 0.0;
  for (double v : values) ss += (v - ci.mean) * (v - ci.mean);
  double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  ci.half_width = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  return ci;
}

}  // namespace medkg
