#include "nsda/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nsda::detect {

namespace {

void check_shapes(const FeatureMatrix& features, const AttentionParams& params) {
  if (features.empty()) throw std::invalid_argument("attention needs at least one channel");
  const std::size_t len = params.feature_len();
  if (len == 0 || params.w.size() != params.hidden_size())
    throw std::invalid_argument("attention parameter shapes inconsistent");
  for (const auto& row : params.V)
    if (row.size() != params.hidden_size())
      throw std::invalid_argument("attention parameter shapes inconsistent");
  for (const auto& h : features)
    if (h.size() != len) throw std::invalid_argument("feature length does not match parameters");
}

// u_k = tanh(V^T h_k), s_k = w . u_k
void channel_score(const std::vector<double>& h, const AttentionParams& params,
                   std::vector<double>& u, double& s) {
  const std::size_t hidden = params.hidden_size();
  u.assign(hidden, 0.0);
  for (std::size_t l = 0; l < h.size(); ++l) {
    const double hl = h[l];
    const auto& row = params.V[l];
    for (std::size_t m = 0; m < hidden; ++m) u[m] += row[m] * hl;
  }
  s = 0.0;
  for (std::size_t m = 0; m < hidden; ++m) {
    u[m] = std::tanh(u[m]);
    s += params.w[m] * u[m];
  }
}

std::vector<double> softmax(const std::vector<double>& s) {
  const double peak = *std::max_element(s.begin(), s.end());
  std::vector<double> a(s.size());
  double total = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    a[k] = std::exp(s[k] - peak);
    total += a[k];
  }
  for (auto& v : a) v /= total;
  return a;
}

}  // namespace

AttentionOutput attention_pool(const FeatureMatrix& features, const AttentionParams& params) {
  check_shapes(features, params);
  const std::size_t channels = features.size();
  const std::size_t len = params.feature_len();

  std::vector<double> scores(channels);
  std::vector<double> u;
  for (std::size_t k = 0; k < channels; ++k) channel_score(features[k], params, u, scores[k]);

  AttentionOutput out;
  out.weights = softmax(scores);
  out.pooled.assign(len, 0.0);
  for (std::size_t k = 0; k < channels; ++k)
    for (std::size_t l = 0; l < len; ++l) out.pooled[l] += out.weights[k] * features[k][l];
  return out;
}

AttentionGrads attention_grad(const FeatureMatrix& features, const AttentionParams& params,
                              std::span<const double> upstream) {
  check_shapes(features, params);
  const std::size_t channels = features.size();
  const std::size_t len = params.feature_len();
  const std::size_t hidden = params.hidden_size();
  if (upstream.size() != len) throw std::invalid_argument("upstream gradient length mismatch");

  std::vector<double> scores(channels);
  std::vector<std::vector<double>> u(channels);
  for (std::size_t k = 0; k < channels; ++k) channel_score(features[k], params, u[k], scores[k]);
  const auto a = softmax(scores);

  // r_k = upstream . h_k drives the softmax Jacobian: q_k = a_k (r_k - a.r).
  std::vector<double> r(channels, 0.0);
  for (std::size_t k = 0; k < channels; ++k)
    for (std::size_t l = 0; l < len; ++l) r[k] += upstream[l] * features[k][l];
  double r_mean = 0.0;
  for (std::size_t k = 0; k < channels; ++k) r_mean += a[k] * r[k];
  std::vector<double> q(channels);
  for (std::size_t k = 0; k < channels; ++k) q[k] = a[k] * (r[k] - r_mean);

  AttentionGrads grads;
  grads.dV.assign(len, std::vector<double>(hidden, 0.0));
  grads.dw.assign(hidden, 0.0);
  grads.dfeatures.assign(channels, std::vector<double>(len, 0.0));

  std::vector<double> tang(hidden);  // w_m (1 - u_km^2), reused per channel
  for (std::size_t k = 0; k < channels; ++k) {
    for (std::size_t m = 0; m < hidden; ++m) {
      const double sech2 = 1.0 - u[k][m] * u[k][m];
      grads.dw[m] += q[k] * u[k][m];
      tang[m] = params.w[m] * sech2;
    }
    for (std::size_t l = 0; l < len; ++l) {
      const double hl = features[k][l];
      double dh = a[k] * upstream[l];
      const auto& vrow = params.V[l];
      auto& dvrow = grads.dV[l];
      for (std::size_t m = 0; m < hidden; ++m) {
        dvrow[m] += q[k] * tang[m] * hl;
        dh += q[k] * tang[m] * vrow[m];
      }
      grads.dfeatures[k][l] = dh;
    }
  }
  return grads;
}

}  // namespace nsda::detect
