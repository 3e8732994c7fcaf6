#include "medkg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <locale>
#include <random>
#include <set>
#include <sstream>

#include "medkg/common.hpp"
#include "medkg/optimizer.hpp"

namespace medkg {

using ag::Tensor;

void TrainConfig::validate() const {
  encoder.validate();
  predictor.validate();
  if (encoder.d != predictor.d)
    throw ConfigError("train: encoder width " + std::to_string(encoder.d) +
                      " does not match predictor width " + std::to_string(predictor.d));
  if (lr <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (batch_size < 1) throw ConfigError("train: batch size must be positive");
  if (max_epochs < 1) throw ConfigError("train: need at least one epoch");
  if (patience < 1) throw ConfigError("train: patience must be positive");
  if (folds < 2) throw ConfigError("train: need at least two folds");
  if (fold < 0 || fold >= folds) throw ConfigError("train: fold index out of range");
  if (train_fraction <= 0.0 || train_fraction > 1.0)
    throw ConfigError("train: training fraction must be in (0, 1]");
}

std::vector<double> label_frequencies(const std::vector<Sample>& samples,
                                      const std::vector<int>& sample_indices, int n_labels) {
  std::vector<double> freq(static_cast<std::size_t>(n_labels), 0.0);
  for (int i : sample_indices)
    for (int c : samples[static_cast<std::size_t>(i)].target_dx)
      freq[static_cast<std::size_t>(c)] += 1.0;
  if (!sample_indices.empty())
    for (auto& f : freq) f /= static_cast<double>(sample_indices.size());
  return freq;
}

namespace {

// Scores the given samples with dropout off; rows align with sample_indices.
void score_samples(const EncoderParams& enc, const PredictorParams& pred, const MetaKG& kg,
                   const OntologySet& onts, const Cohort& cohort,
                   const std::vector<Sample>& samples, const std::vector<int>& sample_indices,
                   Matrix& scores, Matrix& labels) {
  const int n_dx = onts.dx_leaf_count();
  std::mt19937_64 eval_rng(0);  // dropout is disabled on this path; never drawn from
  EncodeResult er = encode(enc, kg, onts, eval_rng, /*training=*/false);
  scores.resize(static_cast<Eigen::Index>(sample_indices.size()), n_dx);
  labels.resize(static_cast<Eigen::Index>(sample_indices.size()), n_dx);
  for (std::size_t row = 0; row < sample_indices.size(); ++row) {
    const Sample& s = samples[static_cast<std::size_t>(sample_indices[row])];
    Tensor logits = predict_logits(pred, er.z, cohort.records[static_cast<std::size_t>(s.patient)],
                                   s.prefix_len, eval_rng, /*training=*/false);
    scores.row(static_cast<Eigen::Index>(row)) =
        (1.0 / (1.0 + (-logits.value().row(0).array()).exp())).matrix();
    labels.row(static_cast<Eigen::Index>(row)) = target_row(s, n_dx).row(0);
  }
}

}  // namespace

MetricsSummary evaluate_samples(const EncoderParams& enc, const PredictorParams& pred,
                                const MetaKG& kg, const OntologySet& onts, const Cohort& cohort,
                                const std::vector<Sample>& samples,
                                const std::vector<int>& sample_indices,
                                const std::vector<double>& label_frequency) {
  if (sample_indices.empty()) throw DataError("evaluate: no samples to score");
  Matrix scores, labels;
  score_samples(enc, pred, kg, onts, cohort, samples, sample_indices, scores, labels);
  MetricsSummary m;
  m.n_samples = static_cast<int>(sample_indices.size());
  m.auprc = micro_auprc(scores, labels);
  m.f1 = micro_f1(scores, labels);
  for (int k : {15, 20, 30}) {
    double acc = 0.0;
    for (std::size_t row = 0; row < sample_indices.size(); ++row) {
      const Sample& s = samples[static_cast<std::size_t>(sample_indices[row])];
      Eigen::VectorXd sr = scores.row(static_cast<Eigen::Index>(row)).transpose();
      acc += acc_at_k(sr, s.target_dx, k);
    }
    m.acc_at[k] = acc / static_cast<double>(sample_indices.size());
  }
  auto bands = frequency_bands(label_frequency, 4);
  m.band_auprc = stratified_auprc(scores, labels, bands, 4);
  return m;
}

SplitIndices resolve_split(const std::vector<Sample>& samples, int n_patients,
                           const TrainConfig& cfg) {
  auto fold_splits =
      split_samples(samples, n_patients, cfg.folds, substream_seed(cfg.seed, "folds"));
  const FoldSplit& split = fold_splits[static_cast<std::size_t>(cfg.fold)];
  if (split.train.empty() || split.val.empty() || split.test.empty())
    throw DataError("train: fold leaves an empty split; cohort too small for " +
                    std::to_string(cfg.folds) + " folds");

  std::vector<int> train_idx = split.train;
  if (cfg.train_fraction < 1.0) {
    std::set<int> patient_set;
    for (int i : train_idx) patient_set.insert(samples[static_cast<std::size_t>(i)].patient);
    std::vector<int> patients(patient_set.begin(), patient_set.end());
    std::mt19937_64 pick_rng(substream_seed(cfg.seed, "trainsize"));
    std::shuffle(patients.begin(), patients.end(), pick_rng);
    auto keep_n = static_cast<std::size_t>(std::max<long long>(
        1, std::llround(cfg.train_fraction * static_cast<double>(patients.size()))));
    patients.resize(std::min(keep_n, patients.size()));
    std::set<int> kept(patients.begin(), patients.end());
    std::vector<int> filtered;
    for (int i : train_idx)
      if (kept.count(samples[static_cast<std::size_t>(i)].patient)) filtered.push_back(i);
    train_idx = std::move(filtered);
  }
  if (train_idx.empty()) throw DataError("train: training subsample is empty");
  return SplitIndices{std::move(train_idx), split.val, split.test};
}

TrainResult train_model(const OntologySet& onts, const MetaKG& kg, const Cohort& cohort,
                        const std::vector<Matrix>& init_embeddings, const TrainConfig& cfg,
                        ag::ParamStore* trained) {
  cfg.validate();
  const int n_dx = onts.dx_leaf_count();
  auto samples = make_samples(cohort, n_dx);
  if (samples.empty()) throw DataError("train: cohort yields no prediction samples");
  SplitIndices split = resolve_split(samples, static_cast<int>(cohort.records.size()), cfg);
  std::vector<int>& train_idx = split.train;

  TrainResult out;
  out.train_samples = static_cast<int>(train_idx.size());
  {
    std::set<int> ps;
    for (int i : train_idx) ps.insert(samples[static_cast<std::size_t>(i)].patient);
    out.train_patients = static_cast<int>(ps.size());
  }

  ag::ParamStore local_store;
  if (trained && !trained->items().empty())
    throw ConfigError("train: parameter store passed for output must start empty");
  ag::ParamStore& store = trained ? *trained : local_store;
  std::mt19937_64 init_rng(substream_seed(cfg.seed, "init"));
  EncoderParams enc = make_encoder(store, cfg.encoder, onts, init_embeddings, init_rng);
  PredictorParams pred = make_predictor(store, cfg.predictor, n_dx, init_rng);

  ag::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  ag::Adam opt(store, adam_cfg);

  std::mt19937_64 shuffle_rng(substream_seed(cfg.seed, "shuffle"));
  std::mt19937_64 dropout_rng(substream_seed(cfg.seed, "dropout"));

  const auto freq = label_frequencies(samples, train_idx, n_dx);

  double best = -1.0;
  std::vector<Matrix> best_snapshot = store.snapshot_values();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    double loss_sum = 0.0;
    bool bad = false;
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t stop = std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      store.zero_grad();
      try {
        EncodeResult er = encode(enc, kg, onts, dropout_rng, /*training=*/true);
        std::vector<Tensor> logit_rows;
        Matrix targets(static_cast<Eigen::Index>(stop - start), n_dx);
        for (std::size_t i = start; i < stop; ++i) {
          const Sample& s = samples[static_cast<std::size_t>(train_idx[i])];
          logit_rows.push_back(predict_logits(
              pred, er.z, cohort.records[static_cast<std::size_t>(s.patient)], s.prefix_len,
              dropout_rng, /*training=*/true));
          targets.row(static_cast<Eigen::Index>(i - start)) = target_row(s, n_dx).row(0);
        }
        Tensor loss = ag::bce_with_logits(ag::concat_rows(logit_rows), targets);
        double lv = loss.value()(0, 0);
        if (!std::isfinite(lv)) {
          bad = true;
          break;
        }
        ag::backward(loss);
        if (!opt.step(store)) {  // refuses non-finite gradients
          bad = true;
          break;
        }
        loss_sum += lv * static_cast<double>(stop - start);
      } catch (const NumericalError&) {  // overflow mid-graph counts as divergence
        bad = true;
        break;
      }
    }
    if (bad) {
      out.diverged = true;
      break;
    }
    out.train_loss.push_back(loss_sum / static_cast<double>(train_idx.size()));

    Matrix val_scores, val_labels;
    try {
      score_samples(enc, pred, kg, onts, cohort, samples, split.val, val_scores, val_labels);
    } catch (const NumericalError&) {
      out.diverged = true;
      break;
    }
    double val = micro_auprc(val_scores, val_labels);
    out.val_auprc.push_back(val);
    out.epochs_run = epoch;

    if (val > best) {
      best = val;
      out.epochs_to_best = epoch;
      best_snapshot = store.snapshot_values();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  store.restore_values(best_snapshot);
  out.best_val_auprc = std::max(best, 0.0);
  out.test = evaluate_samples(enc, pred, kg, onts, cohort, samples, split.test, freq);
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

void metric_line(std::ostringstream& os, const std::string& name,
                 const std::vector<double>& per_seed) {
  auto ci = mean_ci(per_seed);
  os << std::left << std::setw(14) << name << " " << fmt(ci.mean) << " +/- "
     << fmt(ci.half_width) << " |";
  for (double v : per_seed) os << " " << fmt(v);
  os << "\n";
}

void optional_metric_line(std::ostringstream& os, const std::string& name,
                          const std::vector<std::optional<double>>& per_seed) {
  std::vector<double> present;
  for (const auto& v : per_seed)
    if (v) present.push_back(*v);
  if (present.empty()) {
    os << std::left << std::setw(14) << name << " n/a\n";
    return;
  }
  auto ci = mean_ci(present);
  os << std::left << std::setw(14) << name << " " << fmt(ci.mean) << " +/- "
     << fmt(ci.half_width) << " |";
  for (const auto& v : per_seed) os << " " << (v ? fmt(*v) : std::string("n/a"));
  os << "\n";
}

}  // namespace

std::string format_report(const MetricsReport& report) {
  const std::size_t n = report.per_seed.size();
  if (report.seeds.size() != n || report.epochs_to_best.size() != n ||
      report.diverged.size() != n)
    throw ConfigError("report: per-seed field lengths disagree");
  if (n == 0) throw ConfigError("report: no runs to report");

  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "seeds:";
  for (auto s : report.seeds) os << " " << s;
  os << "\n";
  os << "test_samples:";
  for (const auto& m : report.per_seed) os << " " << m.n_samples;
  os << "\n";
  os << "metric         mean     +/- ci95     | per-seed\n";

  auto gather = [&](auto&& get) {
    std::vector<double> v;
    for (const auto& m : report.per_seed) v.push_back(get(m));
    return v;
  };
  metric_line(os, "auprc", gather([](const MetricsSummary& m) { return m.auprc; }));
  metric_line(os, "f1", gather([](const MetricsSummary& m) { return m.f1; }));
  for (int k : {15, 20, 30}) {
    std::vector<double> v;
    for (const auto& m : report.per_seed) {
      auto it = m.acc_at.find(k);
      v.push_back(it == m.acc_at.end() ? 0.0 : it->second);
    }
    metric_line(os, "acc@" + std::to_string(k), v);
  }
  static const char* kBandNames[4] = {"auprc@0-25", "auprc@25-50", "auprc@50-75",
                                      "auprc@75-100"};
  for (int b = 0; b < 4; ++b) {
    std::vector<std::optional<double>> v;
    for (const auto& m : report.per_seed)
      v.push_back(b < static_cast<int>(m.band_auprc.size()) ? m.band_auprc[static_cast<std::size_t>(b)]
                                                            : std::nullopt);
    optional_metric_line(os, kBandNames[b], v);
  }
  os << "epochs_to_best:";
  for (int e : report.epochs_to_best) os << " " << e;
  os << "\n";
  os << "diverged:";
  for (bool d : report.diverged) os << " " << (d ? 1 : 0);
  os << "\n";
  return os.str();
}

}  // namespace medkg
