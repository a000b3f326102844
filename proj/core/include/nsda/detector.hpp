#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nsda/attention.hpp"
#include "nsda/features.hpp"
#include "nsda/rng.hpp"
#include "nsda/types.hpp"

namespace nsda::detect {

// A local detector: maps one preprocessed segment to a seizure probability.
class DetectorModel {
 public:
  virtual ~DetectorModel() = default;
  virtual const std::string& detector_id() const = 0;
  virtual double predict(const Segment& segment) const = 0;
};

// Label source with known sensitivity/specificity, for validating the
// aggregation schemes against ground truth.
struct SyntheticAnnotator {
  std::string detector_id;
  double alpha = 0.9;      // P(label 1 | truth 1)
  double beta = 0.9;       // P(label 0 | truth 0)
  double sharpness = 4.0;  // how far emitted probabilities sit from 0.5
};

// Emits a probability strictly inside (0,1) whose 0.5-thresholded label is
// Bernoulli with the annotator's (alpha, beta) conditioned on the truth.
double synthetic_predict(const SyntheticAnnotator& annotator, int true_label, Rng& rng);

struct TrainHyper {
  double learning_rate = 0.001;
  int halve_every_epochs = 10;
  int epochs = 30;
  int batch_size = 32;
  int attention_hidden = 8;
  double init_range = 0.1;
};

// Feature extraction + channel attention + logistic head. Channel-count
// independent: any number of channels >= 1.
class FeatureDetector final : public DetectorModel {
 public:
  FeatureDetector() = default;

  const std::string& detector_id() const override { return detector_id_; }
  double predict(const Segment& segment) const override;
  double predict_features(const FeatureMatrix& raw_features) const;

  void save(const std::filesystem::path& path) const;
  static FeatureDetector load(const std::filesystem::path& path);
  std::string to_json() const;
  static FeatureDetector from_json(const std::string& text);

  std::string detector_id_;
  std::vector<double> feature_mean;  // kFeatureCount
  std::vector<double> feature_std;   // kFeatureCount
  AttentionParams attention;
  std::vector<double> output_weights;  // kFeatureCount
  double output_bias = 0.0;
};

struct TrainResult {
  FeatureDetector model;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Adam on cross-entropy, mini-batches of `batch_size`, learning rate halved
// every `halve_every_epochs`. Deterministic under the rng seed.
TrainResult train_feature_detector(const SegmentSet& training, Rng& rng,
                                   const TrainHyper& hyper = {},
                                   const std::string& detector_id = "detector");

// Same training loop on pre-extracted raw features (one FeatureMatrix per
// segment) and binary labels; used by pipelines that cache features.
TrainResult train_on_features(const std::vector<FeatureMatrix>& features,
                              const std::vector<int>& labels, Rng& rng,
                              const TrainHyper& hyper = {},
                              const std::string& detector_id = "detector");

}  // namespace nsda::detect
