#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "medkg/ontology.hpp"

namespace medkg {

// One visit = deduplicated set of leaf concepts across all code systems,
// stored as sorted unified leaf ids.
struct Visit {
  std::vector<int> codes;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<Visit> visits;
};

struct Cohort {
  std::vector<PatientRecord> records;

  int total_visits() const;
};

// Line format: patient_id<TAB>visit1;visit2;...  where a visit is a
// comma-separated list of code:type entries (type in {dx,rx,px}).
// strict=true throws on the first malformed line or unknown code; otherwise
// offending records are dropped and a per-line diagnostic is collected.
Cohort load_cohort(const std::string& path, const OntologySet& onts, bool strict = true,
                   std::vector<std::string>* diagnostics = nullptr);

void write_cohort(const Cohort& cohort, const OntologySet& onts, const std::string& path);

// Next-visit prediction instance: visits [0, prefix_len) are observed, the
// diagnosis codes of visit prefix_len are the target. Visits whose next
// visit carries no diagnosis code yield no sample.
struct Sample {
  int patient = 0;
  int prefix_len = 0;
  std::vector<int> target_dx;  // sorted unified leaf ids (dx block)
};

std::vector<Sample> make_samples(const Cohort& cohort, int dx_leaf_count);

// Patient-level k-fold split over samples: a patient's samples never span
// folds. Fold f uses fold f as test, fold (f+1)%k as validation, the rest
// as train.
struct FoldSplit {
  std::vector<int> train, val, test;  // sample indices
};

std::vector<FoldSplit> split_samples(const std::vector<Sample>& samples, int n_patients,
                                     int folds, std::uint64_t seed);

// Synthetic cohort with planted cross-ontology structure: every patient
// carries latent condition clusters that bias which codes appear in every
// system, and leaf-to-parent assignment leans toward cluster-pure parents.
// Diagnoses additionally show family persistence — each patient has a primary
// diagnosis family (one parent node) inside their primary cluster, and
// cluster-sourced diagnosis draws concentrate there, the way chronic
// conditions keep producing sibling codes across admissions.
struct SynthConfig {
  int patients = 750;
  int clusters = 10;
  double strength = 0.9;          // P(code drawn from the patient's clusters)
  double parent_alignment = 0.9;  // P(leaf placed under a same-cluster parent)
  double family_strength = 0.7;   // P(cluster dx draw stays in the primary family)
  int min_visits = 2;
  int max_visits = 4;
  double dx_per_visit = 2.9;  // scaled from a 29-conditions/sample cohort
  double rx_per_visit = 7.0;
  double px_per_visit = 0.7;
  int dx_leaves = 120, rx_leaves = 60, px_leaves = 40;
  int dx_parents = 24, rx_parents = 12, px_parents = 8;
  int dx_roots = 6, rx_roots = 3, px_roots = 2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticData {
  OntologySet onts;
  Cohort cohort;
};

SyntheticData generate_synthetic(const SynthConfig& cfg);

}  // namespace medkg
