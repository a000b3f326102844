#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nsda/types.hpp"

namespace nsda {

// Recordings live as a `<name>.json` sidecar header plus a `<name>.f32`
// payload of little-endian IEEE float32 samples, channel-major. `path` may
// name either file or the bare stem.
Recording load_recording(const std::filesystem::path& path);
void write_recording(const std::filesystem::path& path, const Recording& rec);

// Annotations CSV: patient_id,expert_id,second_index,label with label in
// {0,1}. Seconds not mentioned for a (patient, expert) pair default to 0;
// the track length is max(second_index)+1 unless `duration_s` extends it.
std::vector<AnnotationTrack> load_annotations_csv(const std::filesystem::path& path,
                                                  int duration_s = 0);
void write_annotations_csv(const std::filesystem::path& path,
                           const std::vector<AnnotationTrack>& tracks);

// Predictions CSV: segment_id,detector_id,probability. Probabilities are
// written with enough digits to round-trip (>= 9 significant).
PredictionMatrix load_predictions_csv(const std::filesystem::path& path);
void write_predictions_csv(const std::filesystem::path& path, const PredictionMatrix& m);

// Consensus CSV: segment_id,score,label.
struct ConsensusRow {
  std::string segment_id;
  double score = 0.0;
  int label = 0;
};
std::vector<ConsensusRow> load_consensus_csv(const std::filesystem::path& path);
void write_consensus_csv(const std::filesystem::path& path, const std::vector<ConsensusRow>& rows);

// Fixed formatting for doubles in text outputs; round-trip safe.
std::string format_double(double v);

}  // namespace nsda
