#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "nsda/types.hpp"

namespace nsda::detect {

// Per-channel descriptors of a 16 s, 32 Hz window: line length, RMS
// amplitude, zero-crossing count, and log band power in 0.5-2, 2-4, 4-8 and
// 8-16 Hz. Raw values; standardization statistics live in the trained model.
constexpr int kFeatureCount = 7;

const std::array<std::string, kFeatureCount>& feature_names();

using FeatureMatrix = std::vector<std::vector<double>>;  // channels x kFeatureCount

std::vector<double> channel_features(std::span<const double> x);
FeatureMatrix extract_features(const Segment& segment);

}  // namespace nsda::detect
