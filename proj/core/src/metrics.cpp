#include "nsda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nsda::metrics {

SegmentMetrics segment_metrics(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("predicted/truth length mismatch");
  SegmentMetrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i]) {
      (predicted[i] ? m.counts.tp : m.counts.fn)++;
    } else {
      (predicted[i] ? m.counts.fp : m.counts.tn)++;
    }
  }
  if (m.counts.tp + m.counts.fn > 0)
    m.se = 100.0 * m.counts.tp / static_cast<double>(m.counts.tp + m.counts.fn);
  if (m.counts.tn + m.counts.fp > 0)
    m.sp = 100.0 * m.counts.tn / static_cast<double>(m.counts.tn + m.counts.fp);
  return m;
}

double auc(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) throw std::invalid_argument("scores/truth length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double n_pos = 0.0, n_neg = 0.0;
  for (int t : truth) (t ? n_pos : n_neg) += 1.0;
  if (n_pos == 0.0 || n_neg == 0.0) throw DataError("AUC undefined: single-class truth");

  // Sweep tie groups, counting positive-over-negative wins and ties.
  double wins = 0.0, ties = 0.0, neg_below = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double pos_here = 0.0, neg_here = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (truth[order[j]] ? pos_here : neg_here) += 1.0;
      ++j;
    }
    wins += pos_here * neg_below;
    ties += pos_here * neg_here;
    neg_below += neg_here;
    i = j;
  }
  return (wins + 0.5 * ties) / (n_pos * n_neg);
}

std::vector<double> overlap_average(std::span<const double> segment_scores) {
  const std::vector<std::uint8_t> present(segment_scores.size(), 1);
  return overlap_average_masked(segment_scores, present);
}

std::vector<double> overlap_average_masked(std::span<const double> segment_scores,
                                           std::span<const std::uint8_t> present) {
  if (segment_scores.size() != present.size())
    throw std::invalid_argument("scores/present length mismatch");
  if (segment_scores.empty()) return {};
  const std::size_t n_seg = segment_scores.size();
  const std::size_t cells_per_segment = kSegmentDurationS / kSegmentStrideS;  // 4
  const std::size_t n_cells = n_seg - 1 + cells_per_segment;

  std::vector<double> out(n_cells, 0.0);
  for (std::size_t c = 0; c < n_cells; ++c) {
    const std::size_t lo = c >= cells_per_segment - 1 ? c - (cells_per_segment - 1) : 0;
    const std::size_t hi = std::min(c, n_seg - 1);
    double total = 0.0;
    int covering = 0;
    for (std::size_t g = lo; g <= hi; ++g) {
      if (present[g]) {
        total += segment_scores[g];
        ++covering;
      }
    }
    out[c] = covering > 0 ? total / covering : 0.0;
  }
  return out;
}

EventTimeline extract_events(std::span<const double> cell_scores, double tau,
                             double min_duration_s, const std::string& source) {
  std::vector<std::pair<double, double>> events;
  std::size_t i = 0;
  while (i < cell_scores.size()) {
    if (cell_scores[i] >= tau) {
      std::size_t j = i;
      while (j < cell_scores.size() && cell_scores[j] >= tau) ++j;
      const double start = static_cast<double>(i * kSegmentStrideS);
      const double end = static_cast<double>(j * kSegmentStrideS);
      if (end - start >= min_duration_s) events.emplace_back(start, end);
      i = j;
    } else {
      ++i;
    }
  }
  return EventTimeline::merged(source, std::move(events));
}

namespace {

bool overlaps(const std::pair<double, double>& a, const std::pair<double, double>& b) {
  return a.first < b.second && b.first < a.second;
}

bool overlaps_any(const std::pair<double, double>& e, const EventTimeline& tl) {
  return std::any_of(tl.events.begin(), tl.events.end(),
                     [&](const auto& other) { return overlaps(e, other); });
}

}  // namespace

EventMetrics event_metrics(const EventTimeline& predicted, const EventTimeline& consensus,
                           const EventTimeline& any_expert, double duration_h) {
  if (!(duration_h > 0.0)) throw std::invalid_argument("duration must be positive");

  EventMetrics m;
  m.consensus_seizures = static_cast<long>(consensus.size());
  for (const auto& event : consensus.events)
    if (overlaps_any(event, predicted)) ++m.detected_seizures;

  double false_duration = 0.0;
  for (const auto& event : predicted.events) {
    if (!overlaps_any(event, any_expert)) {
      ++m.false_detections;
      false_duration += event.second - event.first;
    }
  }

  if (m.consensus_seizures > 0)
    m.sdr = 100.0 * m.detected_seizures / static_cast<double>(m.consensus_seizures);
  m.fd_per_h = m.false_detections / duration_h;
  m.mfdd_s = m.false_detections > 0 ? false_duration / m.false_detections : 0.0;
  return m;
}

double gwet_ac1(const LabelMatrix& labels) {
  if (labels.r < 2) throw std::invalid_argument("AC1 needs at least two raters");
  if (labels.n == 0) throw std::invalid_argument("AC1 needs at least one instance");

  const double pairs = static_cast<double>(labels.r) * (labels.r - 1) / 2.0;
  double pa = 0.0, positives = 0.0;
  for (std::size_t i = 0; i < labels.n; ++i) {
    double pos = 0.0;
    for (std::size_t j = 0; j < labels.r; ++j) pos += labels.at(i, j);
    const double neg = static_cast<double>(labels.r) - pos;
    pa += (pos * (pos - 1) / 2.0 + neg * (neg - 1) / 2.0) / pairs;
    positives += pos;
  }
  pa /= static_cast<double>(labels.n);
  const double prevalence = positives / static_cast<double>(labels.n * labels.r);
  const double pe = 2.0 * prevalence * (1.0 - prevalence);
  return (pa - pe) / (1.0 - pe);
}

namespace {

EventTimeline seconds_to_timeline(const std::vector<AnnotationTrack>& annotations, bool require_all,
                                  const std::string& source) {
  if (annotations.empty()) throw std::invalid_argument("no annotations");
  std::size_t duration = annotations.front().labels.size();
  for (const auto& t : annotations) duration = std::min(duration, t.labels.size());

  std::vector<std::pair<double, double>> intervals;
  for (std::size_t s = 0; s < duration; ++s) {
    bool all = true, any = false;
    for (const auto& t : annotations) {
      if (t.labels[s])
        any = true;
      else
        all = false;
    }
    if (require_all ? all : any)
      intervals.emplace_back(static_cast<double>(s), static_cast<double>(s + 1));
  }
  return EventTimeline::merged(source, std::move(intervals));
}

}  // namespace

EventTimeline consensus_timeline(const std::vector<AnnotationTrack>& annotations) {
  return seconds_to_timeline(annotations, true, "consensus");
}

EventTimeline any_expert_timeline(const std::vector<AnnotationTrack>& annotations) {
  return seconds_to_timeline(annotations, false, "any_expert");
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

MetricSummary summarize(std::span<const PatientMetrics> patients) {
  if (patients.empty()) throw std::invalid_argument("no patients to summarize");

  auto collect = [&](auto getter) {
    std::vector<double> vals;
    for (const auto& p : patients) {
      if (auto v = getter(p)) vals.push_back(*v);
    }
    Stat s;
    s.count = vals.size();
    if (!vals.empty()) {
      s.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      s.median = median(vals);
    }
    return s;
  };

  MetricSummary summary;
  summary.se = collect([](const PatientMetrics& p) { return p.se; });
  summary.sp = collect([](const PatientMetrics& p) { return p.sp; });
  summary.auc = collect([](const PatientMetrics& p) { return p.auc; });
  summary.sdr = collect([](const PatientMetrics& p) { return p.sdr; });
  summary.fd_per_h = collect(
      [](const PatientMetrics& p) { return std::optional<double>(p.fd_per_h); });
  summary.mfdd_s = collect(
      [](const PatientMetrics& p) { return std::optional<double>(p.mfdd_s); });
  return summary;
}

}  // namespace nsda::metrics
