#pragma once

#include <span>
#include <vector>

#include "nsda/rng.hpp"
#include "nsda/types.hpp"

namespace nsda::signal {

// Cuts a 32 Hz recording into 16 s windows on the 4 s grid and assigns the
// consensus label for each window from the expert annotations. Annotations
// must cover the full recording.
SegmentSet segment_recording(const Recording& rec, const std::vector<AnnotationTrack>& annotations);

// Windows without labels, for inference on unannotated data. Zero-voltage
// exclusion still applies (label Excluded); everything else is Mixed.
SegmentSet segment_recording_unlabeled(const Recording& rec);

// True iff some channel holds a run of more than one second of exactly-zero
// samples (> 32 consecutive zeros at 32 Hz).
bool zero_voltage_excluded(const Segment& segment);
bool has_zero_run(std::span<const double> x, int max_run);

// Consensus label of the window [start_s, start_s + 16) from the expert
// annotations alone (no zero-voltage check): Seizure/NonSeizure on unanimous
// whole-window agreement, Disagreement when experts differ at any second,
// Mixed when unanimous but straddling a boundary.
SegmentLabel window_label(const std::vector<AnnotationTrack>& annotations, int start_s);

// Uniform subsample of NonSeizure segments down to the Seizure count.
// Input must contain only Seizure/NonSeizure segments and at least one
// Seizure; relative order is preserved; no-op when already balanced.
SegmentSet balance_training_set(const SegmentSet& segments, Rng& rng);

// Index-level balancing shared with pipelines that never materialize
// Segment payloads. labels: 1 = seizure, 0 = non-seizure.
std::vector<std::size_t> balance_indices(const std::vector<int>& labels, Rng& rng);

}  // namespace nsda::signal
