#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsda/types.hpp"

namespace nsda::metrics {

struct ConfusionCounts {
  long tp = 0, tn = 0, fp = 0, fn = 0;
  long total() const { return tp + tn + fp + fn; }
};

struct SegmentMetrics {
  ConfusionCounts counts;
  std::optional<double> se;  // TP/(TP+FN) * 100, absent on zero denominator
  std::optional<double> sp;  // TN/(TN+FP) * 100
};

SegmentMetrics segment_metrics(std::span<const int> predicted, std::span<const int> truth);

// Mann-Whitney AUC: P(score+ > score-) + 1/2 P(tie), tie-aware, via one
// sort. Throws DataError when only one class is present.
double auc(std::span<const double> scores, std::span<const int> truth);

// Averages 16 s segment scores onto the 4 s grid they overlap. Input is
// indexed by segment grid position (start = 4 * index); output cell c covers
// [4c, 4c+4) and averages the <= 4 segments spanning it.
std::vector<double> overlap_average(std::span<const double> segment_scores);

// Same, but segments with present[g] == 0 (e.g. excluded windows) carry no
// score; cells covered by no scored segment get 0.
std::vector<double> overlap_average_masked(std::span<const double> segment_scores,
                                           std::span<const std::uint8_t> present);

// Threshold (inclusive) the 4 s cell scores, merge runs, drop events shorter
// than min_duration_s.
EventTimeline extract_events(std::span<const double> cell_scores, double tau = 0.5,
                             double min_duration_s = 10.0, const std::string& source = "pred");

struct EventMetrics {
  std::optional<double> sdr;  // detected/consensus * 100, absent when no consensus seizures
  double fd_per_h = 0.0;
  double mfdd_s = 0.0;  // mean false-detection duration, 0 when none
  long consensus_seizures = 0;
  long detected_seizures = 0;
  long false_detections = 0;
};

// A consensus seizure counts as detected when any predicted event overlaps
// it; a predicted event is a false detection when it overlaps nothing in
// any_expert. Overlap means half-open intervals intersect with positive
// measure.
EventMetrics event_metrics(const EventTimeline& predicted, const EventTimeline& consensus,
                           const EventTimeline& any_expert, double duration_h);

// Gwet's first-order agreement coefficient for N instances by R >= 2 binary
// raters: AC1 = (pa - pe)/(1 - pe), pa the mean pairwise per-instance
// agreement, pe = 2 pi (1 - pi) with pi the overall positive prevalence.
double gwet_ac1(const LabelMatrix& labels);

// Seconds every expert marks as seizure, merged into intervals.
EventTimeline consensus_timeline(const std::vector<AnnotationTrack>& annotations);
// Seconds any expert marks as seizure.
EventTimeline any_expert_timeline(const std::vector<AnnotationTrack>& annotations);

struct PatientMetrics {
  std::string patient_id;
  std::optional<double> se, sp;
  std::optional<double> auc;
  std::optional<double> sdr;
  double fd_per_h = 0.0;
  double mfdd_s = 0.0;
};

struct Stat {
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;  // patients with the metric defined
};

struct MetricSummary {
  Stat se, sp, auc, sdr, fd_per_h, mfdd_s;
};

// Mean and median per metric over patients; patients with an undefined
// metric are excluded from that metric's summary.
MetricSummary summarize(std::span<const PatientMetrics> patients);

double median(std::vector<double> values);
double quantile(std::vector<double> values, double q);  // linear interpolation

}  // namespace nsda::metrics
