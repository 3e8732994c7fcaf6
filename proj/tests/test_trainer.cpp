#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "medkg/common.hpp"
#include "medkg/metakg.hpp"
#include "medkg/trainer.hpp"

using namespace medkg;

namespace {

SynthConfig toy_synth(std::uint64_t seed) {
  SynthConfig sc;
  sc.patients = 20;
  sc.clusters = 3;
  sc.min_visits = 2;
  sc.max_visits = 4;
  sc.dx_per_visit = 2.0;
  sc.rx_per_visit = 2.0;
  sc.px_per_visit = 0.5;
  sc.dx_leaves = 12;
  sc.rx_leaves = 6;
  sc.px_leaves = 4;
  sc.dx_parents = 4;
  sc.rx_parents = 3;
  sc.px_parents = 2;
  sc.dx_roots = 2;
  sc.rx_roots = 1;
  sc.px_roots = 1;
  sc.seed = seed;
  return sc;
}

TrainConfig toy_train(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.encoder.d = 8;
  cfg.encoder.horizontal_heads = 2;
  cfg.encoder.vertical_heads = 2;
  cfg.encoder.horizontal_dropout = 0.0;
  cfg.encoder.vertical_dropout = 0.0;
  cfg.predictor.d = 8;
  cfg.predictor.ffn_width = 12;
  cfg.predictor.max_visits = 4;
  cfg.batch_size = 16;
  cfg.max_epochs = 5;
  cfg.patience = 5;
  cfg.folds = 4;
  cfg.seed = seed;
  return cfg;
}

struct Fixture {
  SyntheticData data;
  MetaKG kg;
};

Fixture toy_fixture(std::uint64_t seed) {
  SyntheticData data = generate_synthetic(toy_synth(seed));
  MetaKG kg = build_metakg(data.onts, data.cohort, {0.01});
  return Fixture{std::move(data), std::move(kg)};
}

}  // namespace

TEST_CASE("training loss decreases over the first five epochs on three seeds") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto f = toy_fixture(7);
    TrainConfig cfg = toy_train(seed);
    auto init = random_level_embeddings(f.data.onts, cfg.encoder.d, substream_seed(seed, "emb"));
    auto result = train_model(f.data.onts, f.kg, f.data.cohort, init, cfg);
    REQUIRE(!result.diverged);
    REQUIRE(result.train_loss.size() == 5);
    for (std::size_t e = 0; e + 1 < result.train_loss.size(); ++e) {
      INFO("seed ", seed, " epoch ", e);
      CHECK(result.train_loss[e + 1] < result.train_loss[e]);
    }
  }
}

TEST_CASE("identical seed and config reproduce the exact same report") {
  auto f = toy_fixture(11);
  TrainConfig cfg = toy_train(5);
  auto init = random_level_embeddings(f.data.onts, cfg.encoder.d, substream_seed(5, "emb"));
  auto a = train_model(f.data.onts, f.kg, f.data.cohort, init, cfg);
  auto b = train_model(f.data.onts, f.kg, f.data.cohort, init, cfg);
  MetricsReport ra{{cfg.seed}, {a.test}, {a.epochs_to_best}, {a.diverged}};
  MetricsReport rb{{cfg.seed}, {b.test}, {b.epochs_to_best}, {b.diverged}};
  CHECK(format_report(ra) == format_report(rb));
  CHECK(a.train_loss == b.train_loss);
  CHECK(a.val_auprc == b.val_auprc);
}

TEST_CASE("train result bookkeeping: epoch traces, best epoch, metric ranges") {
  auto f = toy_fixture(13);
  TrainConfig cfg = toy_train(9);
  auto init = random_level_embeddings(f.data.onts, cfg.encoder.d, substream_seed(9, "emb"));
  auto r = train_model(f.data.onts, f.kg, f.data.cohort, init, cfg);
  REQUIRE(!r.diverged);
  CHECK(r.epochs_run == static_cast<int>(r.val_auprc.size()));
  CHECK(r.epochs_to_best >= 1);
  CHECK(r.epochs_to_best <= r.epochs_run);
  CHECK(r.best_val_auprc ==
        doctest::Approx(*std::max_element(r.val_auprc.begin(), r.val_auprc.end())));
  CHECK(r.test.auprc > 0.0);
  CHECK(r.test.auprc <= 1.0);
  CHECK(r.test.f1 >= 0.0);
  CHECK(r.test.f1 <= 1.0);
  for (int k : {15, 20, 30}) {
    REQUIRE(r.test.acc_at.count(k) == 1);
    CHECK(r.test.acc_at.at(k) >= 0.0);
    CHECK(r.test.acc_at.at(k) <= 1.0);
  }
  REQUIRE(r.test.band_auprc.size() == 4);
  for (const auto& band : r.test.band_auprc)
    if (band) {
      CHECK(*band >= 0.0);
      CHECK(*band <= 1.0);
    }
  CHECK(r.test.n_samples > 0);
}

TEST_CASE("train_fraction subsamples whole patients") {
  auto f = toy_fixture(17);
  TrainConfig cfg = toy_train(3);
  auto init = random_level_embeddings(f.data.onts, cfg.encoder.d, substream_seed(3, "emb"));
  cfg.max_epochs = 1;
  auto full = train_model(f.data.onts, f.kg, f.data.cohort, init, cfg);
  cfg.train_fraction = 0.5;
  auto half = train_model(f.data.onts, f.kg, f.data.cohort, init, cfg);
  CHECK(half.train_patients == std::max(1, static_cast<int>(std::llround(0.5 * full.train_patients))));
  CHECK(half.train_samples < full.train_samples);
  CHECK(half.train_samples > 0);
}

TEST_CASE("divergent training restores the last good parameters and flags it") {
  auto f = toy_fixture(19);
  TrainConfig cfg = toy_train(2);
  cfg.lr = 1e100;  // forces overflow inside attention within a couple of steps
  cfg.max_epochs = 10;
  auto init = random_level_embeddings(f.data.onts, cfg.encoder.d, substream_seed(2, "emb"));
  auto r = train_model(f.data.onts, f.kg, f.data.cohort, init, cfg);
  CHECK(r.diverged);
  // the report still comes from a finite checkpoint
  CHECK(std::isfinite(r.test.auprc));
  CHECK(r.test.auprc >= 0.0);
  CHECK(r.test.auprc <= 1.0);
}

TEST_CASE("label_frequencies counts the fraction of samples carrying each label") {
  std::vector<Sample> samples(3);
  samples[0].target_dx = {0, 2};
  samples[1].target_dx = {2};
  samples[2].target_dx = {1, 2};
  auto freq = label_frequencies(samples, {0, 1, 2}, 4);
  REQUIRE(freq.size() == 4);
  CHECK(freq[0] == doctest::Approx(1.0 / 3.0));
  CHECK(freq[1] == doctest::Approx(1.0 / 3.0));
  CHECK(freq[2] == doctest::Approx(1.0));
  CHECK(freq[3] == 0.0);
  auto sub = label_frequencies(samples, {1}, 4);
  CHECK(sub[2] == 1.0);
  CHECK(sub[0] == 0.0);
}

TEST_CASE("config validation rejects inconsistent settings") {
  TrainConfig cfg = toy_train(1);
  cfg.predictor.d = 16;  // encoder is 8
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_train(1);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_train(1);
  cfg.fold = 4;  // folds = 4 -> valid indices 0..3
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_train(1);
  cfg.train_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("format_report is stable, complete, and rejects ragged input") {
  MetricsSummary m1;
  m1.auprc = 0.41234567;
  m1.f1 = 0.3;
  m1.acc_at = {{15, 0.5}, {20, 0.6}, {30, 0.7}};
  m1.band_auprc = {0.2, std::nullopt, 0.4, 0.5};
  m1.n_samples = 37;
  MetricsSummary m2 = m1;
  m2.auprc = 0.5;
  m2.band_auprc = {0.3, std::nullopt, 0.5, 0.6};
  MetricsReport r{{1, 2}, {m1, m2}, {4, 6}, {false, false}};
  std::string text = format_report(r);
  CHECK(text == format_report(r));
  CHECK(text.find("seeds: 1 2") != std::string::npos);
  CHECK(text.find("auprc") != std::string::npos);
  CHECK(text.find("acc@15") != std::string::npos);
  CHECK(text.find("auprc@75-100") != std::string::npos);
  CHECK(text.find("0.412346") != std::string::npos);  // fixed 6-digit rendering
  CHECK(text.find("n/a") != std::string::npos);       // band without positives
  CHECK(text.find("epochs_to_best: 4 6") != std::string::npos);
  MetricsReport ragged{{1}, {m1, m2}, {4, 6}, {false, false}};
  CHECK_THROWS_AS(format_report(ragged), ConfigError);
}
