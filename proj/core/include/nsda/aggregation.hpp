#pragma once

#include <span>
#include <string>
#include <vector>

#include "nsda/types.hpp"

namespace nsda::agg {

// label 1 iff score >= tau (inclusive, same rule as the per-detector hard
// labels).
std::vector<int> threshold_labels(std::span<const double> scores, double tau = 0.5);

// Fraction of detectors voting 1 per segment.
std::vector<double> majority_vote(const PredictionMatrix& matrix);

// Mean probability per segment.
std::vector<double> mean_aggregate(const PredictionMatrix& matrix);

// Logistic-regression stacking weights; the detector whose training data
// produced them is excluded from fused ensembles.
struct StackingModel {
  std::vector<double> weights;
  double intercept = 0.0;
  std::string trained_on_detector_id;

  std::string to_json() const;
  static StackingModel from_json(const std::string& text);
};

// sigma(intercept + sum_j w_j p_ij) per segment.
std::vector<double> weighted_mean(const PredictionMatrix& matrix, const StackingModel& stacking);

// L2-penalized logistic regression (penalty 1/2 ||w||^2 on the weights,
// intercept unpenalized) fit by Newton iteration to an infinity-norm
// gradient tolerance. Deterministic: convex objective, fixed start.
StackingModel fit_stacking(const PredictionMatrix& matrix, const std::vector<int>& labels,
                           double l2 = 1.0, double grad_tol = 1e-6);

struct DsTheta {
  double t = 0.5;             // class-1 prior
  std::vector<double> alpha;  // per-detector sensitivity
  std::vector<double> beta;   // per-detector specificity
};

// Parameters are clamped to [delta, 1-delta] before any likelihood math so
// EM fixed points at 0/1 stay finite.
constexpr double kDsClamp = 1e-10;

double ds_log_likelihood(const LabelMatrix& labels, const DsTheta& theta);
std::vector<double> ds_e_step(const LabelMatrix& labels, const DsTheta& theta);
DsTheta ds_m_step(const LabelMatrix& labels, std::span<const double> mu);

struct DawidSkeneState {
  std::vector<double> mu;  // consensus posteriors
  DsTheta theta;
  std::vector<double> log_likelihood;  // per-iteration trace, starts at theta^(0)
  int iterations = 0;
};

// EM over hard labels, initialized from the soft mean aggregate, until the
// log-likelihood improvement drops below eps or k_max iterations.
DawidSkeneState dawid_skene(const PredictionMatrix& matrix, double eps = 1e-5, int k_max = 5000);

}  // namespace nsda::agg
