#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <vector>

#include "nsda/attention.hpp"
#include "nsda/detector.hpp"
#include "nsda/features.hpp"
#include "nsda/metrics.hpp"
#include "nsda/rng.hpp"

using namespace nsda;
using namespace nsda::detect;

namespace {

Segment make_segment(int channels, Rng& rng, double sinus_hz = 0.0, double sinus_amp = 0.0) {
  Segment seg;
  seg.patient_id = "p0";
  seg.label = SegmentLabel::NonSeizure;
  for (int c = 0; c < channels; ++c) {
    std::vector<double> x(kSegmentSamples);
    for (int i = 0; i < kSegmentSamples; ++i) {
      x[i] = rng.next_normal();
      if (sinus_amp > 0.0)
        x[i] += sinus_amp * std::sin(2.0 * std::numbers::pi * sinus_hz * i / kTargetRateHz);
    }
    seg.data.push_back(std::move(x));
  }
  return seg;
}

AttentionParams random_params(std::size_t len, std::size_t hidden, Rng& rng, double scale = 0.5) {
  AttentionParams p;
  p.V.assign(len, std::vector<double>(hidden));
  p.w.assign(hidden, 0.0);
  for (auto& row : p.V)
    for (auto& v : row) v = rng.next_uniform(-scale, scale);
  for (auto& v : p.w) v = rng.next_uniform(-scale, scale);
  return p;
}

FeatureMatrix random_features(std::size_t channels, std::size_t len, Rng& rng) {
  FeatureMatrix f(channels, std::vector<double>(len));
  for (auto& h : f)
    for (auto& v : h) v = rng.next_uniform(-2.0, 2.0);
  return f;
}

// scalar objective upstream . pooled, for finite differencing
double objective(const FeatureMatrix& f, const AttentionParams& p,
                 const std::vector<double>& upstream) {
  const auto out = attention_pool(f, p);
  double v = 0.0;
  for (std::size_t l = 0; l < upstream.size(); ++l) v += upstream[l] * out.pooled[l];
  return v;
}

}  // namespace

TEST_CASE("features of an all-zero channel") {
  const std::vector<double> zeros(kSegmentSamples, 0.0);
  const auto f = channel_features(zeros);
  REQUIRE(f.size() == kFeatureCount);
  CHECK(f[0] == 0.0);  // line length
  CHECK(f[1] == 0.0);  // rms
  CHECK(f[2] == 0.0);  // zero crossings
}

TEST_CASE("a pure 3 Hz sinusoid concentrates power in the 2-4 Hz band") {
  std::vector<double> x(kSegmentSamples);
  for (int i = 0; i < kSegmentSamples; ++i)
    x[i] = std::sin(2.0 * std::numbers::pi * 3.0 * i / kTargetRateHz);
  const auto f = channel_features(x);

  // unit sinusoid at an exact bin: band power = a^2/2 = 0.5
  CHECK(f[4] == doctest::Approx(std::log(0.5)).epsilon(1e-6));
  CHECK(f[4] > f[3] + 10.0);
  CHECK(f[4] > f[5] + 10.0);
  CHECK(f[4] > f[6] + 10.0);
}

TEST_CASE("identical channels produce identical feature vectors") {
  Rng rng(21);
  auto seg = make_segment(1, rng);
  seg.data.push_back(seg.data[0]);
  const auto f = extract_features(seg);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == f[1]);
}

TEST_CASE("short channels are rejected") {
  std::vector<double> x(100, 0.0);
  CHECK_THROWS_AS(channel_features(x), std::invalid_argument);
}

TEST_CASE("attention pool with one channel is the identity") {
  Rng rng(3);
  const auto f = random_features(1, 7, rng);
  const auto p = random_params(7, 8, rng);
  const auto out = attention_pool(f, p);
  REQUIRE(out.weights.size() == 1);
  CHECK(out.weights[0] == doctest::Approx(1.0));
  for (std::size_t l = 0; l < 7; ++l) CHECK(out.pooled[l] == doctest::Approx(f[0][l]));
}

TEST_CASE("attention over identical channels returns the common vector") {
  Rng rng(4);
  auto f = random_features(1, 5, rng);
  f.assign(6, f[0]);
  const auto p = random_params(5, 8, rng);
  const auto out = attention_pool(f, p);
  for (std::size_t l = 0; l < 5; ++l) CHECK(out.pooled[l] == doctest::Approx(f[0][l]));
}

TEST_CASE("attention weights are a convex combination") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const auto f = random_features(1 + rng.next_below(6), 2 + rng.next_below(8), rng);
    const auto p = random_params(f[0].size(), 1 + rng.next_below(8), rng);
    const auto out = attention_pool(f, p);
    double total = 0.0;
    for (double a : out.weights) {
      CHECK(a > 0.0);
      total += a;
    }
    CHECK(total == doctest::Approx(1.0));
    // pooled output lies inside the per-coordinate hull
    for (std::size_t l = 0; l < f[0].size(); ++l) {
      double lo = f[0][l], hi = f[0][l];
      for (const auto& h : f) {
        lo = std::min(lo, h[l]);
        hi = std::max(hi, h[l]);
      }
      CHECK(out.pooled[l] >= lo - 1e-12);
      CHECK(out.pooled[l] <= hi + 1e-12);
    }
  }
}

TEST_CASE("attention pooling is channel-permutation invariant") {
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t channels = 2 + rng.next_below(8);
    const std::size_t len = 2 + rng.next_below(8);
    auto f = random_features(channels, len, rng);
    const auto p = random_params(len, 1 + rng.next_below(8), rng);
    const auto base = attention_pool(f, p);

    std::vector<std::size_t> perm(channels);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    FeatureMatrix g;
    for (auto idx : perm) g.push_back(f[idx]);
    const auto permuted = attention_pool(g, p);
    for (std::size_t l = 0; l < len; ++l)
      CHECK(std::abs(base.pooled[l] - permuted.pooled[l]) < 1e-12);
  }
}

TEST_CASE("attention gradients match central finite differences") {
  Rng rng(7);
  const double step = 1e-6;
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t channels = 1 + rng.next_below(6);
    const std::size_t len = 2 + rng.next_below(7);
    const std::size_t hidden = 1 + rng.next_below(8);
    auto f = random_features(channels, len, rng);
    auto p = random_params(len, hidden, rng);
    std::vector<double> upstream(len);
    for (auto& u : upstream) u = rng.next_uniform(-1.0, 1.0);

    const auto grads = attention_grad(f, p, upstream);

    auto check = [&](double analytic, double numeric) {
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
      CHECK(std::abs(analytic - numeric) / denom < 1e-4);
    };

    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t m = 0; m < hidden; ++m) {
        p.V[l][m] += step;
        const double hi = objective(f, p, upstream);
        p.V[l][m] -= 2 * step;
        const double lo = objective(f, p, upstream);
        p.V[l][m] += step;
        check(grads.dV[l][m], (hi - lo) / (2 * step));
      }
    for (std::size_t m = 0; m < hidden; ++m) {
      p.w[m] += step;
      const double hi = objective(f, p, upstream);
      p.w[m] -= 2 * step;
      const double lo = objective(f, p, upstream);
      p.w[m] += step;
      check(grads.dw[m], (hi - lo) / (2 * step));
    }
    for (std::size_t k = 0; k < channels; ++k)
      for (std::size_t l = 0; l < len; ++l) {
        f[k][l] += step;
        const double hi = objective(f, p, upstream);
        f[k][l] -= 2 * step;
        const double lo = objective(f, p, upstream);
        f[k][l] += step;
        check(grads.dfeatures[k][l], (hi - lo) / (2 * step));
      }
  }
}

TEST_CASE("single-channel attention has zero parameter gradients") {
  Rng rng(8);
  const auto f = random_features(1, 6, rng);
  const auto p = random_params(6, 4, rng);
  std::vector<double> upstream = {1.0, -0.5, 0.25, 2.0, 0.0, -1.0};
  const auto grads = attention_grad(f, p, upstream);
  for (const auto& row : grads.dV)
    for (double v : row) CHECK(v == 0.0);
  for (double v : grads.dw) CHECK(v == 0.0);
  for (std::size_t l = 0; l < 6; ++l)
    CHECK(grads.dfeatures[0][l] == doctest::Approx(upstream[l]));
}

TEST_CASE("duplicated channels receive equal feature gradients") {
  Rng rng(9);
  auto f = random_features(1, 5, rng);
  f.push_back(f[0]);
  f.push_back(random_features(1, 5, rng)[0]);
  const auto p = random_params(5, 6, rng);
  std::vector<double> upstream = {0.3, -0.2, 1.0, 0.5, -0.7};
  const auto grads = attention_grad(f, p, upstream);
  for (std::size_t l = 0; l < 5; ++l)
    CHECK(grads.dfeatures[0][l] == doctest::Approx(grads.dfeatures[1][l]).epsilon(1e-12));
}

TEST_CASE("synthetic annotator reproduces its operating point") {
  Rng rng(10);
  SyntheticAnnotator perfect{"a", 1.0, 1.0, 4.0};
  for (int i = 0; i < 1000; ++i) {
    CHECK(synthetic_predict(perfect, 1, rng) >= 0.5);
    CHECK(synthetic_predict(perfect, 0, rng) < 0.5);
  }

  SyntheticAnnotator a{"a", 0.8, 0.7, 4.0};
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    if (synthetic_predict(a, 1, rng) >= 0.5) ++ones;
  CHECK(std::abs(ones / static_cast<double>(n) - 0.8) < 0.01);

  int zeros = 0;
  for (int i = 0; i < n; ++i)
    if (synthetic_predict(a, 0, rng) < 0.5) ++zeros;
  CHECK(std::abs(zeros / static_cast<double>(n) - 0.7) < 0.01);

  // chance-level annotator: label distribution independent of truth
  SyntheticAnnotator chance{"c", 0.5, 0.5, 4.0};
  int ones_t1 = 0, ones_t0 = 0;
  for (int i = 0; i < n; ++i) {
    if (synthetic_predict(chance, 1, rng) >= 0.5) ++ones_t1;
    if (synthetic_predict(chance, 0, rng) >= 0.5) ++ones_t0;
  }
  CHECK(std::abs(ones_t1 / static_cast<double>(n) - ones_t0 / static_cast<double>(n)) < 0.015);

  // emitted values strictly inside (0, 1)
  for (int i = 0; i < 1000; ++i) {
    const double p = synthetic_predict(a, i % 2, rng);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("training separates linearly separable classes") {
  Rng rng(11);
  SegmentSet set;
  for (int i = 0; i < 60; ++i) {
    auto seg = make_segment(3, rng, 3.0, i % 2 ? 3.0 : 0.0);
    seg.label = i % 2 ? SegmentLabel::Seizure : SegmentLabel::NonSeizure;
    set.segments.push_back(std::move(seg));
  }
  Rng train_rng(12);
  const auto result = train_feature_detector(set, train_rng, {}, "sep");
  CHECK(result.final_loss < result.initial_loss);

  int correct = 0;
  for (const auto& seg : set.segments) {
    const int pred = result.model.predict(seg) >= 0.5 ? 1 : 0;
    if (pred == (seg.label == SegmentLabel::Seizure ? 1 : 0)) ++correct;
  }
  CHECK(correct >= 59);  // >= 0.99 accuracy
}

TEST_CASE("random labels give chance-level held-out AUC") {
  Rng rng(13);
  const int n_train = 600, n_test = 2000;
  std::vector<FeatureMatrix> train_f, test_f;
  std::vector<int> train_y, test_y;
  for (int i = 0; i < n_train; ++i) {
    train_f.push_back(random_features(3, kFeatureCount, rng));
    train_y.push_back(static_cast<int>(rng.next_below(2)));
  }
  for (int i = 0; i < n_test; ++i) {
    test_f.push_back(random_features(3, kFeatureCount, rng));
    test_y.push_back(static_cast<int>(rng.next_below(2)));
  }
  Rng train_rng(14);
  detect::TrainHyper fast;
  fast.epochs = 10;
  const auto result = train_on_features(train_f, train_y, train_rng, fast, "null");

  std::vector<double> scores;
  for (const auto& f : test_f) scores.push_back(result.model.predict_features(f));
  const double auc = metrics::auc(scores, test_y);
  CHECK(std::abs(auc - 0.5) < 0.05);
}

TEST_CASE("training rejects single-class input") {
  Rng rng(15);
  SegmentSet set;
  for (int i = 0; i < 8; ++i) {
    auto seg = make_segment(2, rng);
    seg.label = SegmentLabel::Seizure;
    set.segments.push_back(std::move(seg));
  }
  Rng train_rng(16);
  CHECK_THROWS_AS(train_feature_detector(set, train_rng), DataError);
}

TEST_CASE("training is deterministic under the seed") {
  Rng data_rng(17);
  std::vector<FeatureMatrix> f;
  std::vector<int> y;
  for (int i = 0; i < 80; ++i) {
    f.push_back(random_features(4, kFeatureCount, data_rng));
    y.push_back(i % 2);
  }
  detect::TrainHyper fast;
  fast.epochs = 5;
  Rng r1(99), r2(99);
  const auto m1 = train_on_features(f, y, r1, fast, "d");
  const auto m2 = train_on_features(f, y, r2, fast, "d");
  CHECK(m1.model.to_json() == m2.model.to_json());
  CHECK(m1.final_loss == m2.final_loss);
}

TEST_CASE("model json round trip is lossless") {
  Rng rng(18);
  std::vector<FeatureMatrix> f;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    f.push_back(random_features(2, kFeatureCount, rng));
    y.push_back(i % 2);
  }
  detect::TrainHyper fast;
  fast.epochs = 3;
  Rng train_rng(19);
  const auto result = train_on_features(f, y, train_rng, fast, "rt");
  const auto back = FeatureDetector::from_json(result.model.to_json());
  CHECK(back.to_json() == result.model.to_json());
  CHECK(back.attention.V == result.model.attention.V);
  CHECK(back.output_bias == result.model.output_bias);
  // identical predictions
  for (int i = 0; i < 10; ++i) {
    const auto probe = random_features(5, kFeatureCount, rng);
    CHECK(back.predict_features(probe) == result.model.predict_features(probe));
  }
}

TEST_CASE("predictions stay in [0, 1] for arbitrary finite input") {
  Rng rng(20);
  std::vector<FeatureMatrix> f;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    f.push_back(random_features(2, kFeatureCount, rng));
    y.push_back(i % 2);
  }
  detect::TrainHyper fast;
  fast.epochs = 3;
  Rng train_rng(23);
  const auto model = train_on_features(f, y, train_rng, fast, "clip").model;
  for (int rep = 0; rep < 200; ++rep) {
    auto probe = random_features(1 + rng.next_below(30), kFeatureCount, rng);
    for (auto& h : probe)
      for (auto& v : h) v *= std::pow(10.0, rng.next_uniform(-6.0, 6.0));
    const double p = model.predict_features(probe);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}
