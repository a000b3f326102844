#pragma once

#include <span>
#include <vector>

#include "nsda/features.hpp"

namespace nsda::detect {

// Channel-attention pooling: per-channel scores s_k = w^T tanh(V^T h_k) are
// softmax-normalized into weights a_k and the output is sum_k a_k h_k, a
// convex combination of the channel feature vectors. V is stored feature-
// length by hidden; w has hidden length.
struct AttentionParams {
  std::vector<std::vector<double>> V;  // feature_len x hidden
  std::vector<double> w;               // hidden

  std::size_t feature_len() const { return V.size(); }
  std::size_t hidden_size() const { return V.empty() ? 0 : V.front().size(); }
};

struct AttentionOutput {
  std::vector<double> pooled;   // feature_len
  std::vector<double> weights;  // one per channel, positive, sums to 1
};

AttentionOutput attention_pool(const FeatureMatrix& features, const AttentionParams& params);

struct AttentionGrads {
  std::vector<std::vector<double>> dV;
  std::vector<double> dw;
  FeatureMatrix dfeatures;
};

// Analytic gradients of upstream^T . pooled with respect to V, w and the
// channel features.
AttentionGrads attention_grad(const FeatureMatrix& features, const AttentionParams& params,
                              std::span<const double> upstream);

}  // namespace nsda::detect
