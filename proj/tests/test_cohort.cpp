#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "medkg/cohort.hpp"

using namespace medkg;

namespace {

OntologySet sample_set() {
  auto base = std::string(SAMPLE_DATA_DIR) + "/ontologies/";
  std::vector<Ontology> onts;
  onts.push_back(load_ontology(base + "icd9_dx_sample.csv", ConceptType::dx));
  onts.push_back(load_ontology(base + "atc_rx_sample.csv", ConceptType::rx));
  onts.push_back(load_ontology(base + "icd9_px_sample.csv", ConceptType::px));
  return OntologySet(std::move(onts));
}

std::string tiny_cohort_path() { return std::string(TEST_DATA_DIR) + "/tiny_cohort.tsv"; }

// Wilson-Hilferty approximation to the chi-square upper quantile.
double chi2_quantile(double p, double k) {
  double z = 2.3263478740408408;  // Phi^{-1}(0.99)
  if (p != 0.99) throw std::runtime_error("only the 0.99 quantile is tabulated here");
  double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  return k * t * t * t;
}

}  // namespace

TEST_CASE("cohort lines parse into typed leaf sets") {
  OntologySet set = sample_set();
  Cohort cohort = load_cohort(tiny_cohort_path(), set);
  REQUIRE(cohort.records.size() == 3);
  CHECK(cohort.records[0].patient_id == "p1");
  REQUIRE(cohort.records[0].visits.size() == 2);
  const Visit& v0 = cohort.records[0].visits[0];
  REQUIRE(v0.codes.size() == 3);
  CHECK(v0.codes[0] == set.find_leaf(ConceptType::dx, "428.0"));
  CHECK(v0.codes[1] == set.find_leaf(ConceptType::rx, "N02BE01"));
  CHECK(v0.codes[2] == set.find_leaf(ConceptType::px, "37.22"));
  // padded leaf referenced directly
  CHECK(cohort.records[1].visits[2].codes[0] == set.find_leaf(ConceptType::dx, "486"));
  CHECK(cohort.total_visits() == 7);
}

TEST_CASE("unknown codes and malformed rows raise per-line diagnostics") {
  OntologySet set = sample_set();
  std::string path = "bad_cohort.tsv";
  write_text_file(path,
                  "p1\t428.0:dx\n"
                  "p2\tZZZ.9:dx\n"
                  "p3\t\n"
                  "p4\t401.9:dx;N05BA01:rx\n");
  CHECK_THROWS_WITH_AS(load_cohort(path, set), doctest::Contains("ZZZ.9"), DataError);

  std::vector<std::string> diags;
  Cohort kept = load_cohort(path, set, false, &diags);
  REQUIRE(kept.records.size() == 2);  // order preserved, bad records dropped
  CHECK(kept.records[0].patient_id == "p1");
  CHECK(kept.records[1].patient_id == "p4");
  CHECK(diags.size() == 2);
  CHECK(diags[0].find("line 2") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("empty cohort file warns instead of failing") {
  OntologySet set = sample_set();
  std::string path = "empty_cohort.tsv";
  write_text_file(path, "");
  std::vector<std::string> diags;
  Cohort c = load_cohort(path, set, true, &diags);
  CHECK(c.records.empty());
  CHECK(diags.size() == 1);
  std::remove(path.c_str());
}

TEST_CASE("cohort write/load round-trip preserves every visit") {
  OntologySet set = sample_set();
  Cohort cohort = load_cohort(tiny_cohort_path(), set);
  std::string path = "roundtrip_cohort.tsv";
  write_cohort(cohort, set, path);
  Cohort again = load_cohort(path, set);
  REQUIRE(again.records.size() == cohort.records.size());
  for (size_t i = 0; i < cohort.records.size(); ++i) {
    CHECK(again.records[i].patient_id == cohort.records[i].patient_id);
    REQUIRE(again.records[i].visits.size() == cohort.records[i].visits.size());
    for (size_t v = 0; v < cohort.records[i].visits.size(); ++v)
      CHECK(again.records[i].visits[v].codes == cohort.records[i].visits[v].codes);
  }
  std::remove(path.c_str());
}

TEST_CASE("sample count equals visits minus first visits when every visit has a diagnosis") {
  SynthConfig cfg;
  cfg.patients = 40;
  cfg.seed = 11;
  SyntheticData data = generate_synthetic(cfg);
  auto samples = make_samples(data.cohort, data.onts.dx_leaf_count());
  int expected = 0;  // independent count (generator guarantees >=1 dx per visit)
  for (const auto& rec : data.cohort.records)
    expected += static_cast<int>(rec.visits.size()) - 1;
  CHECK(static_cast<int>(samples.size()) == expected);
  for (const auto& s : samples) {
    CHECK(!s.target_dx.empty());
    for (int uid : s.target_dx) CHECK(uid < data.onts.dx_leaf_count());
  }
}

TEST_CASE("patient-level folds partition patients evenly") {
  SynthConfig cfg;
  cfg.patients = 10;
  cfg.seed = 5;
  SyntheticData data = generate_synthetic(cfg);
  auto samples = make_samples(data.cohort, data.onts.dx_leaf_count());
  auto folds = split_samples(samples, cfg.patients, 5, 123);
  REQUIRE(folds.size() == 5);

  std::set<int> seen_patients;
  for (const auto& f : folds) {
    std::set<int> test_patients, train_patients;
    for (int s : f.test) test_patients.insert(samples[s].patient);
    for (int s : f.train) train_patients.insert(samples[s].patient);
    for (int s : f.val) train_patients.insert(samples[s].patient);
    CHECK(test_patients.size() == 2);  // 10 patients over 5 folds
    for (int p : test_patients) {
      CHECK(!train_patients.count(p));
      seen_patients.insert(p);
    }
    CHECK(f.train.size() + f.val.size() + f.test.size() == samples.size());
  }
  CHECK(seen_patients.size() == 10);  // test folds cover every patient exactly once
}

TEST_CASE("fewer patients than folds is a config error") {
  SynthConfig cfg;
  cfg.patients = 3;
  SyntheticData data = generate_synthetic(cfg);
  auto samples = make_samples(data.cohort, data.onts.dx_leaf_count());
  CHECK_THROWS_AS(split_samples(samples, 3, 5, 1), ConfigError);
}

TEST_CASE("generator is reproducible and infeasible configs fail") {
  SynthConfig cfg;
  cfg.patients = 25;
  cfg.seed = 77;
  SyntheticData a = generate_synthetic(cfg);
  SyntheticData b = generate_synthetic(cfg);
  std::string pa = "synth_a.tsv", pb = "synth_b.tsv";
  write_cohort(a.cohort, a.onts, pa);
  write_cohort(b.cohort, b.onts, pb);
  CHECK(read_text_file(pa) == read_text_file(pb));
  std::remove(pa.c_str());
  std::remove(pb.c_str());

  SynthConfig bad = cfg;
  bad.rx_per_visit = 1000.0;  // more codes per visit than leaves
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("generated code volumes track the configured per-visit means") {
  SynthConfig cfg;
  cfg.patients = 400;
  cfg.seed = 3;
  SyntheticData data = generate_synthetic(cfg);
  double dx = 0, rx = 0, visits = 0;
  for (const auto& rec : data.cohort.records) {
    for (const auto& v : rec.visits) {
      visits += 1;
      for (int uid : v.codes) {
        if (uid < data.onts.dx_leaf_count()) dx += 1;
        else if (uid < data.onts.dx_leaf_count() +
                           data.onts.ontology_by_type(ConceptType::rx)->level_size(3))
          rx += 1;
      }
    }
  }
  // deduplication trims a little off the raw Poisson means
  CHECK(dx / visits == doctest::Approx(cfg.dx_per_visit).epsilon(0.15));
  CHECK(rx / visits == doctest::Approx(cfg.rx_per_visit).epsilon(0.15));
}

TEST_CASE("zero cluster strength gives dx/rx independence (chi-square, alpha 0.01)") {
  SynthConfig cfg;
  cfg.patients = 2800;  // ~10k visits
  cfg.min_visits = 3;
  cfg.max_visits = 4;
  cfg.strength = 0.0;
  cfg.seed = 2026;
  SyntheticData data = generate_synthetic(cfg);

  int n_visits = data.cohort.total_visits();
  REQUIRE(n_visits >= 9000);
  int n_dx = data.onts.dx_leaf_count();
  int n_rx = data.onts.ontology_by_type(ConceptType::rx)->level_size(3);

  // marginal and joint visit-presence counts for the 8x8 most frequent codes
  std::vector<int> dx_count(n_dx, 0), rx_count(n_rx, 0);
  std::vector<std::vector<char>> present;  // per visit: sorted uids
  for (const auto& rec : data.cohort.records) {
    for (const auto& v : rec.visits) {
      for (int uid : v.codes) {
        if (uid < n_dx) dx_count[uid]++;
        else if (uid < n_dx + n_rx) rx_count[uid - n_dx]++;
      }
    }
  }
  auto top8 = [](const std::vector<int>& counts) {
    std::vector<int> idx(counts.size());
    for (size_t i = 0; i < counts.size(); ++i) idx[i] = static_cast<int>(i);
    std::partial_sort(idx.begin(), idx.begin() + 8, idx.end(),
                      [&](int a, int b) { return counts[a] > counts[b]; });
    idx.resize(8);
    return idx;
  };
  auto dx_top = top8(dx_count), rx_top = top8(rx_count);

  double stat = 0.0;
  int dof = 0;
  for (int a : dx_top) {
    for (int b : rx_top) {
      double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
      for (const auto& rec : data.cohort.records) {
        for (const auto& v : rec.visits) {
          bool ha = std::binary_search(v.codes.begin(), v.codes.end(), a);
          bool hb = std::binary_search(v.codes.begin(), v.codes.end(), n_dx + b);
          (ha ? (hb ? n11 : n10) : (hb ? n01 : n00)) += 1;
        }
      }
      double n = n11 + n10 + n01 + n00;
      double ra = n11 + n10, rb = n11 + n01;
      double e11 = ra * rb / n, e10 = ra * (n - rb) / n;
      double e01 = (n - ra) * rb / n, e00 = (n - ra) * (n - rb) / n;
      if (e11 < 5 || e10 < 5 || e01 < 5 || e00 < 5) continue;  // keep the approximation honest
      stat += (n11 - e11) * (n11 - e11) / e11 + (n10 - e10) * (n10 - e10) / e10 +
              (n01 - e01) * (n01 - e01) / e01 + (n00 - e00) * (n00 - e00) / e00;
      dof += 1;
    }
  }
  REQUIRE(dof >= 30);
  CHECK(stat < chi2_quantile(0.99, static_cast<double>(dof)));
}

TEST_CASE("mean dx-rx pointwise mutual information grows with cluster strength") {
  auto mean_pmi = [](double strength, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.patients = 600;
    cfg.strength = strength;
    cfg.seed = seed;
    SyntheticData data = generate_synthetic(cfg);
    int n_dx = data.onts.dx_leaf_count();
    int n_rx = data.onts.ontology_by_type(ConceptType::rx)->level_size(3);
    std::vector<double> dx_count(n_dx, 0), rx_count(n_rx, 0);
    std::map<std::pair<int, int>, double> joint;
    double visits = 0;
    for (const auto& rec : data.cohort.records) {
      for (const auto& v : rec.visits) {
        visits += 1;
        for (int a : v.codes) {
          if (a >= n_dx) continue;
          dx_count[a] += 1;
          for (int b : v.codes)
            if (b >= n_dx && b < n_dx + n_rx) joint[{a, b - n_dx}] += 1;
        }
      }
    }
    for (const auto& rec : data.cohort.records)
      for (const auto& v : rec.visits)
        for (int b : v.codes)
          if (b >= n_dx && b < n_dx + n_rx) rx_count[b - n_dx] += 1;
    // mean PMI per co-occurrence event (weighted by joint count); the
    // unweighted pair mean is dominated by rare cross-cluster pairs
    double total = 0, k = 0;
    for (const auto& [pair, c] : joint) {
      double p_joint = c / visits;
      double p_a = dx_count[pair.first] / visits;
      double p_b = rx_count[pair.second] / visits;
      total += c * std::log(p_joint / (p_a * p_b));
      k += c;
    }
    return total / k;
  };

  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    double weak = mean_pmi(0.0, seed);
    double mid = mean_pmi(0.5, seed);
    double strong = mean_pmi(0.9, seed);
    CHECK(weak < mid);
    CHECK(mid < strong);
  }
}
