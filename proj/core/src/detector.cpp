#include "nsda/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace nsda::detect {

using nlohmann::json;

namespace {

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// log(1 + e^z) without overflow
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

FeatureMatrix standardize(const FeatureMatrix& raw, const std::vector<double>& mean,
                          const std::vector<double>& sd) {
  FeatureMatrix out = raw;
  for (auto& h : out)
    for (std::size_t l = 0; l < h.size(); ++l) h[l] = (h[l] - mean[l]) / sd[l];
  return out;
}

struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

void adam_update(std::vector<double>& params, const std::vector<double>& grad, AdamState& state,
                 double lr, long step) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
    params[i] -= lr * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + eps);
  }
}

// Flat views over the model parameters, in a fixed order: V rows, w, output
// weights, bias.
std::vector<double> flatten(const FeatureDetector& d) {
  std::vector<double> flat;
  for (const auto& row : d.attention.V) flat.insert(flat.end(), row.begin(), row.end());
  flat.insert(flat.end(), d.attention.w.begin(), d.attention.w.end());
  flat.insert(flat.end(), d.output_weights.begin(), d.output_weights.end());
  flat.push_back(d.output_bias);
  return flat;
}

void unflatten(const std::vector<double>& flat, FeatureDetector& d) {
  std::size_t i = 0;
  for (auto& row : d.attention.V)
    for (auto& v : row) v = flat[i++];
  for (auto& v : d.attention.w) v = flat[i++];
  for (auto& v : d.output_weights) v = flat[i++];
  d.output_bias = flat[i++];
}

}  // namespace

double synthetic_predict(const SyntheticAnnotator& annotator, int true_label, Rng& rng) {
  if (true_label != 0 && true_label != 1)
    throw std::invalid_argument("true label must be 0 or 1");
  const double u = rng.next_double();
  const bool emit_one = true_label == 1 ? (u < annotator.alpha) : (u >= annotator.beta);

  // Graded confidence: sigmoid of a positive draw keeps the value strictly
  // between 0.5 and 1 before mirroring for the negative class.
  const double magnitude = sigmoid(annotator.sharpness * rng.next_double_open());
  return emit_one ? magnitude : 1.0 - magnitude;
}

double FeatureDetector::predict_features(const FeatureMatrix& raw_features) const {
  const auto standardized = standardize(raw_features, feature_mean, feature_std);
  const auto pooled = attention_pool(standardized, attention);
  double z = output_bias;
  for (std::size_t l = 0; l < pooled.pooled.size(); ++l) z += output_weights[l] * pooled.pooled[l];
  return sigmoid(z);
}

double FeatureDetector::predict(const Segment& segment) const {
  return predict_features(extract_features(segment));
}

std::string FeatureDetector::to_json() const {
  json j = {
      {"detector_id", detector_id_},
      {"feature_names", feature_names()},
      {"feature_mean", feature_mean},
      {"feature_std", feature_std},
      {"attention_V", attention.V},
      {"attention_w", attention.w},
      {"output_weights", output_weights},
      {"output_bias", output_bias},
  };
  return j.dump(2);
}

FeatureDetector FeatureDetector::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model json: ") + e.what());
  }
  FeatureDetector d;
  try {
    d.detector_id_ = j.at("detector_id").get<std::string>();
    d.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    d.feature_std = j.at("feature_std").get<std::vector<double>>();
    d.attention.V = j.at("attention_V").get<std::vector<std::vector<double>>>();
    d.attention.w = j.at("attention_w").get<std::vector<double>>();
    d.output_weights = j.at("output_weights").get<std::vector<double>>();
    d.output_bias = j.at("output_bias").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model json: ") + e.what());
  }
  return d;
}

void FeatureDetector::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model " + path.string());
  out << to_json() << "\n";
}

FeatureDetector FeatureDetector::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

TrainResult train_on_features(const std::vector<FeatureMatrix>& features,
                              const std::vector<int>& labels, Rng& rng, const TrainHyper& hyper,
                              const std::string& detector_id) {
  if (features.size() != labels.size() || features.empty())
    throw std::invalid_argument("features/labels size mismatch");
  const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (!has_pos || !has_neg) throw DataError("training set must contain both classes");

  const std::size_t n = features.size();
  const auto len = static_cast<std::size_t>(kFeatureCount);

  FeatureDetector model;
  model.detector_id_ = detector_id;

  // Standardization statistics pooled over segments and channels.
  model.feature_mean.assign(len, 0.0);
  model.feature_std.assign(len, 0.0);
  std::size_t rows = 0;
  for (const auto& f : features)
    for (const auto& h : f) {
      for (std::size_t l = 0; l < len; ++l) model.feature_mean[l] += h[l];
      ++rows;
    }
  for (auto& v : model.feature_mean) v /= static_cast<double>(rows);
  for (const auto& f : features)
    for (const auto& h : f)
      for (std::size_t l = 0; l < len; ++l) {
        const double d = h[l] - model.feature_mean[l];
        model.feature_std[l] += d * d;
      }
  for (auto& v : model.feature_std) {
    v = std::sqrt(v / static_cast<double>(rows));
    if (v < 1e-12) v = 1.0;  // constant feature
  }

  std::vector<FeatureMatrix> standardized;
  standardized.reserve(n);
  for (const auto& f : features)
    standardized.push_back(standardize(f, model.feature_mean, model.feature_std));

  const auto hidden = static_cast<std::size_t>(hyper.attention_hidden);
  model.attention.V.assign(len, std::vector<double>(hidden));
  model.attention.w.assign(hidden, 0.0);
  model.output_weights.assign(len, 0.0);
  for (auto& row : model.attention.V)
    for (auto& v : row) v = rng.next_uniform(-hyper.init_range, hyper.init_range);
  for (auto& v : model.attention.w) v = rng.next_uniform(-hyper.init_range, hyper.init_range);
  for (auto& v : model.output_weights) v = rng.next_uniform(-hyper.init_range, hyper.init_range);
  model.output_bias = rng.next_uniform(-hyper.init_range, hyper.init_range);

  auto mean_loss = [&](const FeatureDetector& d) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto pooled = attention_pool(standardized[i], d.attention);
      double z = d.output_bias;
      for (std::size_t l = 0; l < len; ++l) z += d.output_weights[l] * pooled.pooled[l];
      total += softplus(z) - static_cast<double>(labels[i]) * z;
    }
    return total / static_cast<double>(n);
  };

  TrainResult result;
  result.initial_loss = mean_loss(model);

  auto flat = flatten(model);
  AdamState adam(flat.size());
  std::vector<double> grad(flat.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const double lr =
        hyper.learning_rate / std::pow(2.0, static_cast<double>(epoch / hyper.halve_every_epochs));
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < n; begin += hyper.batch_size) {
      const std::size_t end = std::min(n, begin + hyper.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      unflatten(flat, model);

      for (std::size_t b = begin; b < end; ++b) {
        const auto& feats = standardized[order[b]];
        const auto pooled = attention_pool(feats, model.attention);
        double z = model.output_bias;
        for (std::size_t l = 0; l < len; ++l) z += model.output_weights[l] * pooled.pooled[l];
        const double dz = sigmoid(z) - static_cast<double>(labels[order[b]]);

        std::vector<double> upstream(len);
        for (std::size_t l = 0; l < len; ++l) upstream[l] = dz * model.output_weights[l];
        const auto ag = attention_grad(feats, model.attention, upstream);

        std::size_t gi = 0;
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t m = 0; m < hidden; ++m) grad[gi++] += ag.dV[l][m];
        for (std::size_t m = 0; m < hidden; ++m) grad[gi++] += ag.dw[m];
        for (std::size_t l = 0; l < len; ++l) grad[gi++] += dz * pooled.pooled[l];
        grad[gi++] += dz;
      }
      const double scale = 1.0 / static_cast<double>(end - begin);
      for (auto& g : grad) g *= scale;
      adam_update(flat, grad, adam, lr, ++step);
    }
  }

  unflatten(flat, model);
  result.final_loss = mean_loss(model);
  result.model = std::move(model);
  return result;
}

TrainResult train_feature_detector(const SegmentSet& training, Rng& rng, const TrainHyper& hyper,
                                   const std::string& detector_id) {
  std::vector<FeatureMatrix> features;
  std::vector<int> labels;
  features.reserve(training.size());
  labels.reserve(training.size());
  for (const auto& seg : training.segments) {
    if (seg.label != SegmentLabel::Seizure && seg.label != SegmentLabel::NonSeizure)
      throw std::invalid_argument("training segments must be SEIZURE or NONSEIZURE");
    features.push_back(extract_features(seg));
    labels.push_back(seg.label == SegmentLabel::Seizure ? 1 : 0);
  }
  return train_on_features(features, labels, rng, hyper, detector_id);
}

}  // namespace nsda::detect
