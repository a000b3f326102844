#include "nsda/features.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

namespace nsda::detect {

namespace {

// Iterative radix-2 FFT; window length is always kSegmentSamples = 512.
void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

constexpr double kBandEdgesHz[] = {0.5, 2.0, 4.0, 8.0, 16.0};
constexpr double kLogFloor = 1e-12;

}  // namespace

const std::array<std::string, kFeatureCount>& feature_names() {
  static const std::array<std::string, kFeatureCount> names = {
      "line_length", "rms",          "zero_crossings", "log_power_0.5_2",
      "log_power_2_4", "log_power_4_8", "log_power_8_16"};
  return names;
}

std::vector<double> channel_features(std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(kSegmentSamples))
    throw std::invalid_argument("channel shorter than one 16 s window at 32 Hz");

  double line_length = 0.0;
  double sum_sq = 0.0;
  double crossings = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sum_sq += x[i] * x[i];
    if (i > 0) {
      line_length += std::abs(x[i] - x[i - 1]);
      if (x[i - 1] * x[i] < 0.0) crossings += 1.0;
    }
  }
  const double rms = std::sqrt(sum_sq / static_cast<double>(x.size()));

  std::vector<std::complex<double>> spec(x.begin(), x.end());
  fft_inplace(spec);
  const double n = static_cast<double>(x.size());
  const double bin_hz = kTargetRateHz / n;

  std::vector<double> features = {line_length, rms, crossings};
  for (int b = 0; b < 4; ++b) {
    const auto k_lo = static_cast<std::size_t>(std::ceil(kBandEdgesHz[b] / bin_hz - 1e-9));
    const auto k_hi = static_cast<std::size_t>(std::ceil(kBandEdgesHz[b + 1] / bin_hz - 1e-9));
    double power = 0.0;
    for (std::size_t k = k_lo; k < k_hi; ++k) power += std::norm(spec[k]);
    features.push_back(std::log(2.0 * power / (n * n) + kLogFloor));
  }
  return features;
}

FeatureMatrix extract_features(const Segment& segment) {
  FeatureMatrix out;
  out.reserve(segment.data.size());
  for (const auto& channel : segment.data) out.push_back(channel_features(channel));
  return out;
}

}  // namespace nsda::detect
