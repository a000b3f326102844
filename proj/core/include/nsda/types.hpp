#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nsda {

// Malformed or inconsistent input data. The CLI maps this family to exit
// code 2; std::invalid_argument (contract misuse) is mapped the same way.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kSegmentDurationS = 16;
constexpr int kSegmentStrideS = 4;
constexpr int kTargetRateHz = 32;
constexpr int kSegmentSamples = kSegmentDurationS * kTargetRateHz;

// Multi-channel sampled EEG, channel-major. All values in microvolts.
struct Recording {
  std::string patient_id;
  double sample_rate_hz = 0.0;
  std::vector<std::string> channels;
  std::vector<std::vector<double>> samples;  // channels x n, equal n per channel

  std::size_t channel_count() const { return channels.size(); }
  std::size_t samples_per_channel() const { return samples.empty() ? 0 : samples.front().size(); }
  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples_per_channel()) / sample_rate_hz : 0.0;
  }

  // Throws DataError on any invariant violation (rate, duplicate or empty
  // channel list, ragged sample arrays).
  void validate() const;
};

// Per-second binary seizure labels from one expert, aligned to the start of
// the recording. labels.size() == floor(duration_s).
struct AnnotationTrack {
  std::string patient_id;
  std::string expert_id;
  std::vector<std::uint8_t> labels;
};

enum class SegmentLabel : std::uint8_t {
  Seizure,       // every expert marks every second seizure
  NonSeizure,    // every expert marks every second non-seizure
  Mixed,         // experts unanimous per second, window straddles a boundary
  Disagreement,  // experts differ somewhere in the window
  Excluded,      // zero-voltage rule fired
};

const char* to_string(SegmentLabel label);
SegmentLabel segment_label_from_string(const std::string& s);

// One 16 s preprocessed window on the 4 s grid.
struct Segment {
  std::string patient_id;
  int start_s = 0;
  std::vector<std::vector<double>> data;  // channels x kSegmentSamples
  SegmentLabel label = SegmentLabel::Mixed;

  std::string id() const { return patient_id + ":" + std::to_string(start_s); }
};

struct SegmentSet {
  std::vector<Segment> segments;

  std::size_t size() const { return segments.size(); }
  std::size_t count(SegmentLabel label) const;
};

// Number of full 16 s windows on the 4 s grid inside a recording of the
// given duration: floor((T - 16) / 4) + 1, zero below 16 s.
int segment_count_for_duration(double duration_s);

// Hard labels derived from probabilities (or expert opinions): N instances
// by R raters, row-major.
struct LabelMatrix {
  std::size_t n = 0;
  std::size_t r = 0;
  std::vector<std::uint8_t> values;  // n * r

  std::uint8_t at(std::size_t i, std::size_t j) const { return values[i * r + j]; }
};

// N segments by R detectors of seizure probabilities; the universal input to
// every aggregation scheme.
struct PredictionMatrix {
  std::vector<std::string> segment_ids;   // length N
  std::vector<std::string> detector_ids;  // length R
  std::vector<double> probs;              // N x R row-major, each in [0, 1]

  std::size_t rows() const { return segment_ids.size(); }
  std::size_t cols() const { return detector_ids.size(); }
  double at(std::size_t i, std::size_t j) const { return probs[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j) { return probs[i * cols() + j]; }

  // y_i^j = 1 iff p_i^j >= 0.5 (inclusive threshold).
  std::uint8_t hard_label(std::size_t i, std::size_t j) const { return at(i, j) >= 0.5 ? 1 : 0; }
  LabelMatrix hard_labels() const;

  void validate() const;
};

// Merged seizure intervals in seconds, half-open [start, end), sorted and
// pairwise disjoint.
struct EventTimeline {
  std::string source;
  std::vector<std::pair<double, double>> events;

  // Normalizes arbitrary intervals: drops empty ones, sorts, merges
  // touching/overlapping spans.
  static EventTimeline merged(std::string source, std::vector<std::pair<double, double>> raw);

  std::size_t size() const { return events.size(); }
  double total_duration_s() const;
};

}  // namespace nsda
