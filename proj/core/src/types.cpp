#include "nsda/types.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace nsda {

void Recording::validate() const {
  if (!(sample_rate_hz > 0.0)) throw DataError("invalid sample rate");
  if (channels.empty()) throw DataError("recording has no channels");
  std::unordered_set<std::string> seen;
  for (const auto& c : channels) {
    if (!seen.insert(c).second) throw DataError("duplicate channel label: " + c);
  }
  if (samples.size() != channels.size())
    throw DataError("channel count does not match sample arrays");
  const std::size_t n = samples_per_channel();
  for (const auto& ch : samples) {
    if (ch.size() != n) throw DataError("channels have unequal sample counts");
  }
}

const char* to_string(SegmentLabel label) {
  switch (label) {
    case SegmentLabel::Seizure: return "SEIZURE";
    case SegmentLabel::NonSeizure: return "NONSEIZURE";
    case SegmentLabel::Mixed: return "MIXED";
    case SegmentLabel::Disagreement: return "DISAGREEMENT";
    case SegmentLabel::Excluded: return "EXCLUDED";
  }
  return "?";
}

SegmentLabel segment_label_from_string(const std::string& s) {
  if (s == "SEIZURE") return SegmentLabel::Seizure;
  if (s == "NONSEIZURE") return SegmentLabel::NonSeizure;
  if (s == "MIXED") return SegmentLabel::Mixed;
  if (s == "DISAGREEMENT") return SegmentLabel::Disagreement;
  if (s == "EXCLUDED") return SegmentLabel::Excluded;
  throw DataError("unknown segment label: " + s);
}

std::size_t SegmentSet::count(SegmentLabel label) const {
  return static_cast<std::size_t>(std::count_if(
      segments.begin(), segments.end(), [&](const Segment& s) { return s.label == label; }));
}

int segment_count_for_duration(double duration_s) {
  if (duration_s < kSegmentDurationS) return 0;
  return static_cast<int>(std::floor((duration_s - kSegmentDurationS) / kSegmentStrideS)) + 1;
}

LabelMatrix PredictionMatrix::hard_labels() const {
  LabelMatrix m;
  m.n = rows();
  m.r = cols();
  m.values.resize(m.n * m.r);
  for (std::size_t i = 0; i < m.n; ++i)
    for (std::size_t j = 0; j < m.r; ++j) m.values[i * m.r + j] = hard_label(i, j);
  return m;
}

void PredictionMatrix::validate() const {
  if (probs.size() != rows() * cols())
    throw DataError("prediction matrix shape mismatch");
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("probability outside [0, 1]");
  }
}

EventTimeline EventTimeline::merged(std::string source, std::vector<std::pair<double, double>> raw) {
  std::erase_if(raw, [](const auto& e) { return !(e.second > e.first); });
  std::sort(raw.begin(), raw.end());
  EventTimeline tl;
  tl.source = std::move(source);
  for (const auto& e : raw) {
    if (!tl.events.empty() && e.first <= tl.events.back().second) {
      tl.events.back().second = std::max(tl.events.back().second, e.second);
    } else {
      tl.events.push_back(e);
    }
  }
  return tl;
}

double EventTimeline::total_duration_s() const {
  double total = 0.0;
  for (const auto& e : events) total += e.second - e.first;
  return total;
}

}  // namespace nsda
