#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nsda/aggregation.hpp"
#include "nsda/detector.hpp"
#include "nsda/filter.hpp"
#include "nsda/metrics.hpp"
#include "nsda/rng.hpp"
#include "nsda/types.hpp"

namespace nsda::sim {

// Synthetic cohort calibration. Defaults target the 18-channel profile:
// ~19.1% of each recording inside consensus seizures lasting 1.9 min on
// average, three experts, one-hour recordings.
struct CohortSpec {
  int patient_count = 12;
  double duration_s = 3600.0;
  double seizure_fraction = 0.191;  // target consensus fraction
  double mean_seizure_s = 114.0;
  int channel_count = 18;
  double sample_rate_hz = 256.0;
  int expert_count = 3;
  double expert_jitter_s = 3.0;   // per-edge annotation jitter
  double expert_miss_prob = 0.05;
  std::uint64_t seed = 1;

  std::string to_json() const;
  static CohortSpec from_json(const std::string& text);
  void validate() const;
};

struct PatientData {
  Recording recording;  // raw, at spec.sample_rate_hz
  std::vector<AnnotationTrack> annotations;
  EventTimeline ground_truth;
};

// Deterministic per patient: same spec and index, same bytes.
PatientData generate_patient(const CohortSpec& spec, int patient_index);

struct Cohort {
  CohortSpec spec;
  std::vector<PatientData> patients;
};

Cohort generate_cohort(const CohortSpec& spec);

// Preprocessed view: segment labels plus cached raw features; raw samples
// are dropped patient by patient so large cohorts stay in memory budget.
struct SegmentRecord {
  int start_s = 0;
  SegmentLabel label = SegmentLabel::Mixed;
  detect::FeatureMatrix features;  // empty for Excluded segments
};

struct PatientFeatures {
  std::string patient_id;
  double duration_s = 0.0;
  std::vector<SegmentRecord> segments;
  EventTimeline consensus_events;   // spans all experts agree on
  EventTimeline any_expert_events;  // union of expert seizures
};

PatientFeatures prepare_patient(const PatientData& data, const signal::IirFilter& filter);

struct PreparedCohort {
  CohortSpec spec;
  std::vector<PatientFeatures> patients;
};

PreparedCohort prepare_cohort(const CohortSpec& spec);

struct ExperimentConfig {
  std::vector<int> k_values = {3, 4, 5};
  int runs = 3;
  std::vector<std::string> schemes = {"mv", "mean", "wmean", "ds"};
  double tau = 0.5;
  double ds_eps = 1e-5;
  int ds_k_max = 5000;
  bool ds_pooled = false;  // one EM per (run, k) over all folds instead of per patient
  std::uint64_t seed = 1;
  int jobs = 0;  // 0 = hardware concurrency
  detect::TrainHyper hyper;

  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
};

// Random partition into k disjoint subsets covering the input, each of size
// at least min_size. Throws when patients.size() < k * min_size.
std::vector<std::vector<std::string>> partition_patients(const std::vector<std::string>& patients,
                                                         int k, Rng& rng, int min_size = 3);

struct ResultRow {
  int run = 0;
  int k = 0;  // 0 for the baseline detector
  std::string patient;
  std::string scheme;  // mv | mean | wmean | ds | baseline | local
  metrics::PatientMetrics metrics;
  std::optional<double> ac1;  // agreement between locals, local rows only
};

struct DsParamsRecord {
  int run = 0;
  int k = 0;
  std::string patient;
  double t = 0.0;
  std::vector<double> alpha, beta;
  int iterations = 0;
  double final_log_likelihood = 0.0;
};

struct FoldSizes {
  int run = 0;
  int k = 0;
  std::string patient;
  std::vector<int> subset_sizes;
};

struct LosoResult {
  std::vector<ResultRow> rows;
  std::vector<DsParamsRecord> ds_params;
  std::vector<FoldSizes> fold_sizes;
};

// Leave-one-subject-out over the cohort for every configured k and run.
// Folds execute in parallel (config.jobs) but all randomness derives from
// (seed, run, fold, k), so outputs are independent of scheduling.
LosoResult run_loso(const PreparedCohort& cohort, const ExperimentConfig& config);

struct TrendRow {
  std::string scheme;
  int k = 0;
  std::string metric;
  double median = 0.0, q1 = 0.0, q3 = 0.0;
};

struct InstitutionSizeRow {
  int k = 0;
  double mean_median_patients = 0.0;
};

struct TrendTable {
  std::vector<TrendRow> rows;
  std::vector<InstitutionSizeRow> institution_sizes;
};

// Per (scheme, k, metric): the median and interquartile range over runs of
// the per-run patient means.
TrendTable trend_report(const LosoResult& result);

void write_per_patient_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> load_per_patient_csv(const std::filesystem::path& path);
void write_trend_csv(const std::filesystem::path& path, const TrendTable& table);
void write_institution_csv(const std::filesystem::path& path, const TrendTable& table);
void write_ds_params(const std::filesystem::path& dir, const std::vector<DsParamsRecord>& records);

}  // namespace nsda::sim
