// Longitudinal cohort data model and its JSONL file format.
//
// A cohort file is one JSON object per line: a header carrying the schema
// (and ground truth when known), then one record per line.
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace ritw {

// True generating coefficients of a simulated cohort.
struct GroundTruth {
  std::vector<double> beta_baseline;   // outcome loading on the baseline
  std::vector<double> beta_covariate;  // unit-norm loading on the covariates
  std::vector<double> ate_by_time;     // [C-1, C-2, ..., C-T]
};

struct PatientRecord {
  int id = 0;
  std::vector<double> baseline;               // d
  std::vector<std::vector<double>> covariates;  // T x d
  std::vector<int> treatments;                // length T, absorbing 0...01...1
  std::vector<double> outcomes;               // K values (K = 1 for the simulation)

  // 0-based index of the first treated step, or -1 when never treated.
  int initiation_step() const;
  bool treated() const { return initiation_step() >= 0; }
};

struct CohortSchema {
  int baseline_dim = 0;  // d
  int horizon = 0;       // T
  int tasks = 1;         // K
  bool binary_outcome = false;
  std::optional<GroundTruth> truth;
};

struct Cohort {
  CohortSchema schema;
  std::vector<PatientRecord> records;
  // Set by the biasing step when a treated arm was emptied; estimation
  // surfaces it instead of crashing.
  std::optional<std::string> warning;

  std::size_t size() const { return records.size(); }
  std::size_t treated_count() const;
  void validate() const;  // shape and absorbing-treatment invariants
};

void save_cohort(const Cohort& cohort, const std::string& path);
Cohort load_cohort(const std::string& path);

}  // namespace ritw
