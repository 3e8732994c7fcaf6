#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "medkg/common.hpp"
#include "medkg/metrics.hpp"

using namespace medkg;

namespace {

// Quadratic-time average precision reference: each cell's rank is
// 1 + #{strictly greater} + #{equal and earlier in flattened sample-major order},
// and the precision at a positive's rank counts every cell at or above it.
double quadratic_ap(const Matrix& s, const Matrix& y) {
  const Eigen::Index cols = s.cols();
  const Eigen::Index n = s.size();
  auto sc = [&](Eigen::Index f) { return s(f / cols, f % cols); };
  auto lb = [&](Eigen::Index f) { return y(f / cols, f % cols); };
  double total_pos = 0.0;
  for (Eigen::Index f = 0; f < n; ++f) total_pos += lb(f);
  double ap = 0.0;
  for (Eigen::Index f = 0; f < n; ++f) {
    if (lb(f) != 1.0) continue;
    double rank = 1.0;
    double pos_at_or_above = 1.0;  // this positive itself
    for (Eigen::Index g = 0; g < n; ++g) {
      if (g == f) continue;
      bool above = sc(g) > sc(f) || (sc(g) == sc(f) && g < f);
      if (!above) continue;
      rank += 1.0;
      if (lb(g) == 1.0) pos_at_or_above += 1.0;
    }
    ap += pos_at_or_above / rank;
  }
  return ap / total_pos;
}

// Exhaustive top-k oracle: full sort on (score desc, index asc), then count hits.
double acc_oracle(const Eigen::VectorXd& s, const std::vector<int>& positives, int k) {
  std::vector<int> idx(static_cast<std::size_t>(s.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (s(a) != s(b)) return s(a) > s(b);
    return a < b;
  });
  int take = std::min<int>(k, static_cast<int>(idx.size()));
  std::set<int> top(idx.begin(), idx.begin() + take);
  int hit = 0;
  for (int p : positives) hit += top.count(p) ? 1 : 0;
  return static_cast<double>(hit) /
         static_cast<double>(std::min<std::size_t>(static_cast<std::size_t>(k),
                                                   positives.size()));
}

// Counting oracle for micro F1: gathers predicted and true cells into sets
// and derives the confusion counts from set sizes.
struct F1Counts {
  double tp = 0, fp = 0, fn = 0;
};
F1Counts f1_counts(const Matrix& s, const Matrix& y, double thr) {
  std::set<std::pair<Eigen::Index, Eigen::Index>> pred, truth;
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      if (s(r, c) >= thr) pred.insert({r, c});
      if (y(r, c) == 1.0) truth.insert({r, c});
    }
  }
  F1Counts out;
  for (const auto& cell : pred) out.tp += truth.count(cell) ? 1 : 0;
  out.fp = static_cast<double>(pred.size()) - out.tp;
  out.fn = static_cast<double>(truth.size()) - out.tp;
  return out;
}

struct RandomPair {
  Matrix scores;
  Matrix labels;
};

// Coarsely quantized scores force plenty of exact ties so the tie-break
// rules are actually exercised, not just the generic ordering.
RandomPair random_pair(std::mt19937_64& rng, bool quantize) {
  std::uniform_int_distribution<int> rows_d(1, 6), cols_d(2, 12);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::bernoulli_distribution pos_d(0.3);
  RandomPair p;
  int rows = rows_d(rng), cols = cols_d(rng);
  p.scores.resize(rows, cols);
  p.labels.resize(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double u = unif(rng);
      p.scores(r, c) = quantize ? std::floor(u * 5.0) / 5.0 : u;
      p.labels(r, c) = pos_d(rng) ? 1.0 : 0.0;
    }
  }
  if (p.labels.sum() == 0.0) p.labels(rows / 2, cols / 2) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("acc_at_k: perfect scores with three true labels fill the min(k, count) denominator") {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(40);
  std::vector<int> pos = {4, 11, 29};
  for (int p : pos) s(p) = 1.0;
  CHECK(acc_at_k(s, pos, 15) == 1.0);  // denominator is 3, not 15
  CHECK(acc_at_k(s, pos, 2) == doctest::Approx(2.0 / 2.0));
}

TEST_CASE("acc_at_k: positives ranked strictly last score zero when k misses them") {
  int n = 30;
  Eigen::VectorXd s(n);
  for (int i = 0; i < n; ++i) s(i) = static_cast<double>(n - i);
  std::vector<int> pos = {n - 1, n - 2};  // the two lowest scores
  CHECK(acc_at_k(s, pos, 10) == 0.0);
}

TEST_CASE("acc_at_k: ties go to the lower label index") {
  Eigen::VectorXd s = Eigen::VectorXd::Constant(5, 0.7);
  // all tied: top-2 is {0, 1} by index
  CHECK(acc_at_k(s, {1}, 2) == 1.0);
  CHECK(acc_at_k(s, {2}, 2) == 0.0);
}

TEST_CASE("acc_at_k: 200 random samples match the exhaustive sort oracle exactly") {
  std::mt19937_64 rng(411);
  std::uniform_int_distribution<int> n_d(3, 40);
  std::uniform_int_distribution<int> k_d(1, 30);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    int n = n_d(rng);
    Eigen::VectorXd s(n);
    bool quantize = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      double u = unif(rng);
      s(i) = quantize ? std::floor(u * 4.0) / 4.0 : u;
    }
    std::vector<int> pos;
    for (int i = 0; i < n; ++i)
      if (unif(rng) < 0.25) pos.push_back(i);
    if (pos.empty()) pos.push_back(n - 1);
    int k = k_d(rng);
    CHECK(acc_at_k(s, pos, k) == acc_oracle(s, pos, k));
  }
}

TEST_CASE("acc_at_k: invariant under strictly monotone score transforms") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  Eigen::VectorXd s(25);
  for (int i = 0; i < 25; ++i) s(i) = unif(rng);
  std::vector<int> pos = {0, 7, 13, 24};
  Eigen::VectorXd warped = s;
  for (int i = 0; i < 25; ++i) warped(i) = std::tanh(3.0 * s(i)) + 5.0;
  for (int k : {1, 3, 15, 20, 30})
    CHECK(acc_at_k(s, pos, k) == acc_at_k(warped, pos, k));
}

TEST_CASE("acc_at_k: rejects bad arguments") {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(4);
  CHECK_THROWS_AS(acc_at_k(s, {}, 5), ConfigError);
  CHECK_THROWS_AS(acc_at_k(s, {1}, 0), ConfigError);
  CHECK_THROWS_AS(acc_at_k(s, {9}, 5), ConfigError);
}

TEST_CASE("micro_auprc: single positive ranked first among ten is 1.0") {
  Matrix s(1, 10), y = Matrix::Zero(1, 10);
  for (int c = 0; c < 10; ++c) s(0, c) = 1.0 - 0.05 * c;
  y(0, 0) = 1.0;
  CHECK(micro_auprc(s, y) == 1.0);
}

TEST_CASE("micro_auprc: scores equal to labels give 1.0") {
  std::mt19937_64 rng(5);
  auto p = random_pair(rng, false);
  CHECK(micro_auprc(p.labels, p.labels) == 1.0);
}

TEST_CASE("micro_auprc: perfectly separated scores give 1.0 regardless of magnitude") {
  Matrix s(2, 4), y(2, 4);
  y << 1, 0, 1, 0, 0, 0, 1, 0;
  s << 900.0, -3.0, 17.5, 0.001, -2.9, -50.0, 4.2e6, 0.0005;
  CHECK(micro_auprc(s, y) == 1.0);
}

TEST_CASE("micro_auprc: 500 random pairs match the quadratic reference within 1e-9") {
  std::mt19937_64 rng(2026);
  for (int trial = 0; trial < 500; ++trial) {
    auto p = random_pair(rng, trial % 3 != 0);
    double fast = micro_auprc(p.scores, p.labels);
    double slow = quadratic_ap(p.scores, p.labels);
    CHECK(std::abs(fast - slow) <= 1e-9);
  }
}

TEST_CASE("micro_auprc: flattening is sample-major (tie between samples resolves to the earlier row)") {
  // Two cells tied at the top, one per sample; the positive sits in sample 0,
  // so it is ranked first and AP = 1. Flipping the positive to sample 1 halves it.
  Matrix s(2, 2), y = Matrix::Zero(2, 2);
  s << 0.9, 0.1, 0.9, 0.1;
  y(0, 0) = 1.0;
  CHECK(micro_auprc(s, y) == 1.0);
  Matrix y2 = Matrix::Zero(2, 2);
  y2(1, 0) = 1.0;
  CHECK(micro_auprc(s, y2) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("micro_auprc: errors on no positives, shape mismatch, non-binary labels") {
  Matrix s = Matrix::Random(2, 3);
  CHECK_THROWS_AS(micro_auprc(s, Matrix::Zero(2, 3)), DataError);
  CHECK_THROWS_AS(micro_auprc(s, Matrix::Zero(3, 2)), ConfigError);
  Matrix y = Matrix::Zero(2, 3);
  y(0, 0) = 0.5;
  CHECK_THROWS_AS(micro_auprc(s, y), DataError);
}

TEST_CASE("micro_f1: exact agreement with the truth is 1.0") {
  std::mt19937_64 rng(9);
  auto p = random_pair(rng, false);
  CHECK(micro_f1(p.labels, p.labels) == 1.0);
}

TEST_CASE("micro_f1: no predicted positives with some true positives is 0.0") {
  Matrix s = Matrix::Constant(3, 5, 0.2);
  Matrix y = Matrix::Zero(3, 5);
  y(1, 2) = 1.0;
  y(2, 4) = 1.0;
  CHECK(micro_f1(s, y) == 0.0);
}

TEST_CASE("micro_f1: empty confusion (no predictions, no truths) is 0.0 by convention") {
  CHECK(micro_f1(Matrix::Constant(2, 2, 0.1), Matrix::Zero(2, 2)) == 0.0);
}

TEST_CASE("micro_f1: a score exactly at the threshold counts as predicted positive") {
  Matrix s = Matrix::Constant(1, 1, 0.5);
  Matrix y = Matrix::Constant(1, 1, 1.0);
  CHECK(micro_f1(s, y) == 1.0);
}

TEST_CASE("micro_f1: 500 random pairs match the counting oracle exactly") {
  std::mt19937_64 rng(314);
  std::uniform_real_distribution<double> thr_d(0.2, 0.8);
  for (int trial = 0; trial < 500; ++trial) {
    auto p = random_pair(rng, trial % 4 == 0);
    double thr = trial % 5 == 0 ? 0.5 : thr_d(rng);
    auto c = f1_counts(p.scores, p.labels, thr);
    double got = micro_f1(p.scores, p.labels, thr);
    double denom = 2 * c.tp + c.fp + c.fn;
    CHECK(got == (denom == 0.0 ? 0.0 : 2 * c.tp / denom));
    if (c.tp > 0) {
      // same value via the precision/recall harmonic mean, up to rounding
      double precision = c.tp / (c.tp + c.fp);
      double recall = c.tp / (c.tp + c.fn);
      CHECK(got == doctest::Approx(2 * precision * recall / (precision + recall))
                       .epsilon(1e-12));
    }
  }
}

TEST_CASE("frequency_bands: bands partition the label set with near-equal sizes, rarest first") {
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int n : {4, 7, 8, 23, 120}) {
    std::vector<double> freq(static_cast<std::size_t>(n));
    for (auto& f : freq) f = unif(rng);
    auto band = frequency_bands(freq, 4);
    REQUIRE(static_cast<int>(band.size()) == n);
    std::vector<int> count(4, 0);
    for (int b : band) {
      REQUIRE(b >= 0);
      REQUIRE(b < 4);
      ++count[static_cast<std::size_t>(b)];
    }
    CHECK(std::accumulate(count.begin(), count.end(), 0) == n);
    auto [lo, hi] = std::minmax_element(count.begin(), count.end());
    CHECK(*hi - *lo <= 1);
    // every label in a lower band is at most as frequent as every label above it
    for (std::size_t a = 0; a < freq.size(); ++a)
      for (std::size_t b = 0; b < freq.size(); ++b)
        if (band[a] < band[b]) CHECK(freq[a] <= freq[b]);
  }
}

TEST_CASE("frequency_bands: known example with ties resolved by label index") {
  // frequencies: label 2 rarest, labels 0 and 3 tied, label 1 most common.
  std::vector<double> freq = {0.4, 0.9, 0.1, 0.4};
  auto band = frequency_bands(freq, 4);
  CHECK(band == std::vector<int>{1, 3, 0, 2});
}

TEST_CASE("frequency_bands: validates arguments") {
  CHECK_THROWS_AS(frequency_bands({}, 4), ConfigError);
  CHECK_THROWS_AS(frequency_bands({0.1}, 0), ConfigError);
}

TEST_CASE("stratified_auprc: hand-worked two-band example") {
  // bands: labels {0,1} -> band 0, labels {2,3} -> band 1
  std::vector<int> band = {0, 0, 1, 1};
  Matrix s(2, 4), y(2, 4);
  s << 0.9, 0.2, 0.8, 0.1, 0.4, 0.7, 0.3, 0.6;
  y << 1, 0, 1, 0, 0, 1, 0, 0;
  // band 0 cells (sample-major): (0.9,+), (0.2,-), (0.4,-), (0.7,+)
  //   ranked: 0.9+, 0.7+, 0.4-, 0.2-  -> AP = (1/1 + 2/2)/2 = 1
  // band 1 cells: (0.8,+), (0.1,-), (0.3,-), (0.6,-)
  //   ranked: 0.8+, 0.6-, 0.3-, 0.1-  -> AP = 1
  auto out = stratified_auprc(s, y, band, 2);
  REQUIRE(out.size() == 2);
  REQUIRE(out[0].has_value());
  REQUIRE(out[1].has_value());
  CHECK(*out[0] == 1.0);
  CHECK(*out[1] == 1.0);

  // demote a positive inside band 0: rank the 0.4 cell positive instead of 0.7
  Matrix y2 = y;
  y2(1, 1) = 0.0;
  y2(1, 0) = 1.0;
  // band 0 ranked: 0.9+, 0.7-, 0.4+, 0.2-  -> AP = (1/1 + 2/3)/2 = 5/6
  auto out2 = stratified_auprc(s, y2, band, 2);
  CHECK(*out2[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("stratified_auprc: a band without positives reports no value") {
  std::vector<int> band = {0, 0, 1, 1};
  Matrix s = Matrix::Random(3, 4);
  Matrix y = Matrix::Zero(3, 4);
  y(0, 0) = 1.0;  // positives only in band 0
  auto out = stratified_auprc(s, y, band, 2);
  CHECK(out[0].has_value());
  CHECK(!out[1].has_value());
}

TEST_CASE("stratified_auprc: per-band values match micro_auprc on the band's columns") {
  std::mt19937_64 rng(133);
  auto p = random_pair(rng, false);
  // ensure enough columns for four bands
  while (p.scores.cols() < 4) p = random_pair(rng, false);
  std::vector<double> freq(static_cast<std::size_t>(p.scores.cols()));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto& f : freq) f = unif(rng);
  auto band = frequency_bands(freq, 4);
  auto out = stratified_auprc(p.scores, p.labels, band, 4);
  for (int b = 0; b < 4; ++b) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index c = 0; c < p.scores.cols(); ++c)
      if (band[static_cast<std::size_t>(c)] == b) cols.push_back(c);
    Matrix s(p.scores.rows(), static_cast<Eigen::Index>(cols.size()));
    Matrix y(p.labels.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
      s.col(static_cast<Eigen::Index>(i)) = p.scores.col(cols[i]);
      y.col(static_cast<Eigen::Index>(i)) = p.labels.col(cols[i]);
    }
    if (y.sum() == 0.0) {
      CHECK(!out[static_cast<std::size_t>(b)].has_value());
    } else {
      REQUIRE(out[static_cast<std::size_t>(b)].has_value());
      CHECK(*out[static_cast<std::size_t>(b)] ==
            doctest::Approx(quadratic_ap(s, y)).epsilon(1e-12));
    }
  }
}

TEST_CASE("stratified_auprc: band assignment must cover every label column") {
  Matrix s = Matrix::Random(2, 4);
  Matrix y = Matrix::Zero(2, 4);
  y(0, 0) = 1.0;
  CHECK_THROWS_AS(stratified_auprc(s, y, {0, 1, 2}, 4), ConfigError);
}

TEST_CASE("mean_ci: known values") {
  CHECK(mean_ci({}).mean == 0.0);
  CHECK(mean_ci({}).half_width == 0.0);
  CHECK(mean_ci({0.7}).mean == 0.7);
  CHECK(mean_ci({0.7}).half_width == 0.0);
  auto ci = mean_ci({0.0, 1.0});
  CHECK(ci.mean == doctest::Approx(0.5));
  // sample sd = sqrt(0.5); half width = 1.96 * sqrt(0.5) / sqrt(2) = 0.98
  CHECK(ci.half_width == doctest::Approx(0.98).epsilon(1e-12));
  auto ci3 = mean_ci({0.2, 0.4, 0.6});
  CHECK(ci3.mean == doctest::Approx(0.4));
  CHECK(ci3.half_width == doctest::Approx(1.96 * 0.2 / std::sqrt(3.0)).epsilon(1e-12));
}
