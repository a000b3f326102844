#include "nsda/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nsda::signal {

namespace {

Segment cut_window(const Recording& rec, int start_s) {
  Segment seg;
  seg.patient_id = rec.patient_id;
  seg.start_s = start_s;
  const auto offset = static_cast<std::size_t>(start_s) * kTargetRateHz;
  seg.data.reserve(rec.samples.size());
  for (const auto& channel : rec.samples) {
    seg.data.emplace_back(channel.begin() + offset, channel.begin() + offset + kSegmentSamples);
  }
  return seg;
}

}  // namespace

bool has_zero_run(std::span<const double> x, int max_run) {
  int run = 0;
  for (double v : x) {
    run = (v == 0.0) ? run + 1 : 0;
    if (run > max_run) return true;
  }
  return false;
}

bool zero_voltage_excluded(const Segment& segment) {
  for (const auto& channel : segment.data) {
    if (has_zero_run(channel, kTargetRateHz)) return true;
  }
  return false;
}

SegmentLabel window_label(const std::vector<AnnotationTrack>& annotations, int start_s) {
  if (annotations.empty()) throw std::invalid_argument("no annotations");
  bool any_seizure = false, any_nonseizure = false;
  for (int s = start_s; s < start_s + kSegmentDurationS; ++s) {
    const std::uint8_t first = annotations.front().labels[s];
    for (const auto& track : annotations) {
      if (track.labels[s] != first) return SegmentLabel::Disagreement;
    }
    (first ? any_seizure : any_nonseizure) = true;
  }
  if (any_seizure && !any_nonseizure) return SegmentLabel::Seizure;
  if (any_nonseizure && !any_seizure) return SegmentLabel::NonSeizure;
  return SegmentLabel::Mixed;
}

SegmentSet segment_recording(const Recording& rec, const std::vector<AnnotationTrack>& annotations) {
  rec.validate();
  if (rec.sample_rate_hz != kTargetRateHz)
    throw std::invalid_argument("segmentation expects a 32 Hz recording");
  if (annotations.empty()) throw std::invalid_argument("no annotations");

  const int duration = static_cast<int>(std::floor(rec.duration_s()));
  for (const auto& track : annotations) {
    if (track.labels.size() < static_cast<std::size_t>(duration))
      throw DataError("annotation from expert " + track.expert_id + " shorter than recording");
  }

  SegmentSet set;
  const int n = segment_count_for_duration(rec.duration_s());
  set.segments.reserve(n);
  for (int g = 0; g < n; ++g) {
    const int start = g * kSegmentStrideS;
    Segment seg = cut_window(rec, start);
    seg.label = zero_voltage_excluded(seg) ? SegmentLabel::Excluded
                                           : window_label(annotations, start);
    set.segments.push_back(std::move(seg));
  }
  return set;
}

SegmentSet segment_recording_unlabeled(const Recording& rec) {
  rec.validate();
  if (rec.sample_rate_hz != kTargetRateHz)
    throw std::invalid_argument("segmentation expects a 32 Hz recording");
  SegmentSet set;
  const int n = segment_count_for_duration(rec.duration_s());
  set.segments.reserve(n);
  for (int g = 0; g < n; ++g) {
    Segment seg = cut_window(rec, g * kSegmentStrideS);
    seg.label = zero_voltage_excluded(seg) ? SegmentLabel::Excluded : SegmentLabel::Mixed;
    set.segments.push_back(std::move(seg));
  }
  return set;
}

std::vector<std::size_t> balance_indices(const std::vector<int>& labels, Rng& rng) {
  std::vector<std::size_t> seizure, nonseizure;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] ? seizure : nonseizure).push_back(i);
  if (seizure.empty()) throw DataError("training set has no seizure segments");

  if (nonseizure.size() > seizure.size()) {
    rng.shuffle(nonseizure);
    nonseizure.resize(seizure.size());
  }
  std::vector<std::size_t> keep = seizure;
  keep.insert(keep.end(), nonseizure.begin(), nonseizure.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

SegmentSet balance_training_set(const SegmentSet& segments, Rng& rng) {
  std::vector<int> labels;
  labels.reserve(segments.size());
  for (const auto& seg : segments.segments) {
    switch (seg.label) {
      case SegmentLabel::Seizure: labels.push_back(1); break;
      case SegmentLabel::NonSeizure: labels.push_back(0); break;
      default:
        throw std::invalid_argument("balance_training_set expects only SEIZURE/NONSEIZURE input");
    }
  }
  const auto keep = balance_indices(labels, rng);
  SegmentSet out;
  out.segments.reserve(keep.size());
  for (auto i : keep) out.segments.push_back(segments.segments[i]);
  return out;
}

}  // namespace nsda::signal
