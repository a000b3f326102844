#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <tuple>
#include <vector>

#include "nsda/filter.hpp"
#include "nsda/rng.hpp"
#include "nsda/segmentation.hpp"
#include "nsda/types.hpp"

using namespace nsda;
using namespace nsda::signal;

namespace {

// Independent response oracle: expand the cascade into full numerator and
// denominator polynomials by convolution, then evaluate both on the unit
// circle. Exercises a different code path than the per-section product used
// by the implementation.
std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

double oracle_magnitude(const IirFilter& f, double freq_hz) {
  std::vector<double> num = {1.0}, den = {1.0};
  for (const auto& s : f.sections) {
    num = poly_mul(num, {s.b0, s.b1, s.b2});
    den = poly_mul(den, {1.0, s.a1, s.a2});
  }
  const std::complex<double> zinv =
      std::exp(std::complex<double>(0.0, -2.0 * std::numbers::pi * freq_hz / f.design_rate_hz));
  std::complex<double> n(0.0), d(0.0), zp(1.0);
  for (std::size_t i = 0; i < num.size(); ++i) {
    n += num[i] * zp;
    zp *= zinv;
  }
  zp = 1.0;
  for (std::size_t i = 0; i < den.size(); ++i) {
    d += den[i] * zp;
    zp *= zinv;
  }
  return std::abs(n / d);
}

double db(double mag) { return 20.0 * std::log10(mag + 1e-300); }

Recording mono(std::vector<double> samples, double rate, const std::string& id = "p0") {
  Recording rec;
  rec.patient_id = id;
  rec.sample_rate_hz = rate;
  rec.channels = {"ch0"};
  rec.samples.push_back(std::move(samples));
  return rec;
}

std::vector<AnnotationTrack> uniform_annotations(const std::string& patient, int seconds,
                                                 int experts,
                                                 const std::vector<std::pair<int, int>>& seizures) {
  std::vector<AnnotationTrack> tracks;
  for (int e = 0; e < experts; ++e) {
    AnnotationTrack t{patient, "e" + std::to_string(e), std::vector<std::uint8_t>(seconds, 0)};
    for (const auto& [a, b] : seizures)
      for (int s = a; s < b && s < seconds; ++s) t.labels[s] = 1;
    tracks.push_back(std::move(t));
  }
  return tracks;
}

}  // namespace

TEST_CASE("cheby2 bandpass meets the stopband and passband spec") {
  const auto f = design_cheby2_bandpass(6, 0.5, 16.0, 40.0, 256.0);
  CHECK(f.sections.size() == 3);  // cascade order equals declared order
  CHECK(f.order == 6);
  CHECK(f.is_stable());

  // at and below the lower edge
  CHECK(db(oracle_magnitude(f, 0.5)) <= -39.5);
  CHECK(db(oracle_magnitude(f, 0.1)) <= -39.5);
  // spec example form: |H(0.1)| <= 10^(-40/20) * 10^(0.5/20)
  CHECK(oracle_magnitude(f, 0.1) <= std::pow(10.0, -40.0 / 20.0) * std::pow(10.0, 0.5 / 20.0));
  // at and beyond the upper edge
  for (double fr : {16.0, 18.0, 24.0, 48.0, 96.0, 127.0})
    CHECK(db(oracle_magnitude(f, fr)) <= -39.5);
  // unity at the geometric mean of the edges
  const double mid = std::sqrt(0.5 * 16.0);
  CHECK(std::abs(db(oracle_magnitude(f, mid))) <= 1.0);

  // oracle and implementation agree
  for (double fr : {0.3, 1.0, 2.83, 10.0, 20.0})
    CHECK(oracle_magnitude(f, fr) ==
          doctest::Approx(std::abs(frequency_response(f, fr))).epsilon(1e-9));
}

TEST_CASE("cheby2 design rejects bad arguments") {
  CHECK_THROWS_AS(design_cheby2_bandpass(6, 0.5, 200.0, 40.0, 256.0), std::invalid_argument);
  CHECK_THROWS_AS(design_cheby2_bandpass(5, 0.5, 16.0, 40.0, 256.0), std::invalid_argument);
  CHECK_THROWS_AS(design_cheby2_bandpass(6, 16.0, 0.5, 40.0, 256.0), std::invalid_argument);
  CHECK_THROWS_AS(design_cheby2_bandpass(6, 0.5, 16.0, -3.0, 256.0), std::invalid_argument);
  CHECK_THROWS_AS(design_cheby2_bandpass(6, 0.5, 16.0, 40.0, 0.0), std::invalid_argument);
}

TEST_CASE("designed filters are stable across a parameter sweep") {
  for (int order : {2, 4, 6, 8, 10}) {
    for (double atten : {20.0, 40.0, 60.0}) {
      for (auto [lo, hi, rate] : {std::tuple{0.5, 16.0, 256.0},
                                  std::tuple{1.0, 30.0, 128.0},
                                  std::tuple{0.1, 12.0, 64.0},
                                  std::tuple{5.0, 45.0, 512.0}}) {
        const auto f = design_cheby2_bandpass(order, lo, hi, atten, rate);
        CHECK(f.is_stable());
        CHECK(static_cast<int>(f.sections.size()) * 2 == order);
        CHECK(db(oracle_magnitude(f, lo)) <= -(atten - 0.5));
        CHECK(db(oracle_magnitude(f, hi)) <= -(atten - 0.5));
      }
    }
  }
}

TEST_CASE("filtering is linear") {
  const auto f = design_cheby2_bandpass(6, 0.5, 16.0, 40.0, 256.0);
  Rng rng(11);
  std::vector<double> x(512), y(512);
  for (auto& v : x) v = rng.next_normal();
  for (auto& v : y) v = rng.next_normal();
  const double a = 1.7, b = -0.4;

  std::vector<double> combo(512);
  for (std::size_t i = 0; i < 512; ++i) combo[i] = a * x[i] + b * y[i];

  const auto fx = apply_filter(f, x);
  const auto fy = apply_filter(f, y);
  const auto fc = apply_filter(f, combo);
  double max_rel = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < 512; ++i) scale = std::max(scale, std::abs(fc[i]));
  for (std::size_t i = 0; i < 512; ++i)
    max_rel = std::max(max_rel, std::abs(fc[i] - (a * fx[i] + b * fy[i])) / scale);
  CHECK(max_rel < 1e-9);
}

TEST_CASE("filter_and_decimate sample counts and rate checks") {
  const auto f = design_cheby2_bandpass(6, 0.5, 16.0, 40.0, 256.0);
  Recording rec;
  rec.patient_id = "p0";
  rec.sample_rate_hz = 256.0;
  for (int c = 0; c < 3; ++c) {
    rec.channels.push_back("ch" + std::to_string(c));
    rec.samples.emplace_back(256 * 3600, 1.0);
  }
  const auto out = filter_and_decimate(rec, f, 32);
  CHECK(out.sample_rate_hz == 32.0);
  for (const auto& ch : out.samples) CHECK(ch.size() == 115200);

  rec.sample_rate_hz = 250.0;
  const auto f250 = design_cheby2_bandpass(6, 0.5, 16.0, 40.0, 250.0);
  CHECK_THROWS_WITH_AS(filter_and_decimate(rec, f250, 32), doctest::Contains("7.8125"), DataError);
}

TEST_CASE("a 20 Hz sinusoid is attenuated to the stopband floor") {
  const auto f = design_cheby2_bandpass(6, 0.5, 16.0, 40.0, 256.0);
  const int n = 256 * 60;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i)
    x[i] = std::sin(2.0 * std::numbers::pi * 20.0 * i / 256.0);
  const auto rec = filter_and_decimate(mono(std::move(x), 256.0), f, 32);

  // skip the causal transient, measure steady-state RMS
  const auto& y = rec.samples[0];
  double sum_sq = 0.0;
  const std::size_t start = y.size() / 2;
  for (std::size_t i = start; i < y.size(); ++i) sum_sq += y[i] * y[i];
  const double rms_out = std::sqrt(sum_sq / static_cast<double>(y.size() - start));
  const double rms_in = 1.0 / std::sqrt(2.0);
  CHECK(rms_out <= std::pow(10.0, (-40.0 + 0.5) / 20.0) * rms_in);
}

TEST_CASE("int16 rescale rounds half away from zero and saturates") {
  Recording rec = mono({12.4, -12.5, 0.4999, -0.5, 40000.0, -40000.0, 0.0}, 32.0);
  const auto result = rescale_to_int16(rec);
  const auto& y = result.recording.samples[0];
  CHECK(y[0] == 12.0);
  CHECK(y[1] == -13.0);
  CHECK(y[2] == 0.0);
  CHECK(y[3] == -1.0);
  CHECK(y[4] == 32767.0);
  CHECK(y[5] == -32767.0);
  CHECK(y[6] == 0.0);
  CHECK(result.saturated == 2);

  Recording zeros = mono(std::vector<double>(64, 0.0), 32.0);
  const auto zr = rescale_to_int16(zeros);
  CHECK(zr.saturated == 0);
  for (double v : zr.recording.samples[0]) CHECK(v == 0.0);
}

TEST_CASE("zero voltage rule boundaries") {
  Segment seg;
  seg.patient_id = "p0";
  seg.data.assign(1, std::vector<double>(kSegmentSamples, 1.0));

  for (int i = 0; i < 33; ++i) seg.data[0][100 + i] = 0.0;
  CHECK(zero_voltage_excluded(seg));

  seg.data[0].assign(kSegmentSamples, 1.0);
  for (int i = 0; i < 32; ++i) seg.data[0][100 + i] = 0.0;
  CHECK_FALSE(zero_voltage_excluded(seg));

  seg.data[0].assign(kSegmentSamples, 1.0);
  CHECK_FALSE(zero_voltage_excluded(seg));
}

TEST_CASE("segment labels follow the unanimity rules") {
  const int seconds = 120;
  Recording rec = mono(std::vector<double>(seconds * 32, 1.0), 32.0);

  // all three experts agree on a seizure covering [40, 80)
  auto tracks = uniform_annotations("p0", seconds, 3, {{40, 80}});
  auto set = segment_recording(rec, tracks);
  CHECK(static_cast<int>(set.size()) == segment_count_for_duration(seconds));

  for (const auto& seg : set.segments) {
    if (seg.start_s >= 40 && seg.start_s + 16 <= 80) CHECK(seg.label == SegmentLabel::Seizure);
    if (seg.start_s + 16 <= 40 || seg.start_s >= 80) CHECK(seg.label == SegmentLabel::NonSeizure);
    if (seg.start_s < 40 && seg.start_s + 16 > 40) CHECK(seg.label == SegmentLabel::Mixed);
  }

  // expert 2 dissents inside the window -> disagreement
  tracks[2].labels[50] = 0;
  set = segment_recording(rec, tracks);
  for (const auto& seg : set.segments) {
    if (seg.start_s <= 50 && 50 < seg.start_s + 16) CHECK(seg.label == SegmentLabel::Disagreement);
  }

  // a 2 s flatline inside one channel excludes the covering windows
  Recording with_zeros = rec;
  for (int i = 0; i < 64; ++i) with_zeros.samples[0][32 * 20 + i] = 0.0;
  set = segment_recording(with_zeros, uniform_annotations("p0", seconds, 3, {}));
  bool excluded_seen = false;
  for (const auto& seg : set.segments) {
    if (seg.start_s <= 20 && 22 <= seg.start_s + 16) {
      CHECK(seg.label == SegmentLabel::Excluded);
      excluded_seen = true;
    }
  }
  CHECK(excluded_seen);
}

TEST_CASE("3600 s recording yields 897 segments") {
  Recording rec = mono(std::vector<double>(3600 * 32, 1.0), 32.0);
  const auto set = segment_recording(rec, uniform_annotations("p0", 3600, 3, {}));
  CHECK(set.size() == 897);
}

TEST_CASE("short annotations are rejected") {
  Recording rec = mono(std::vector<double>(120 * 32, 1.0), 32.0);
  auto tracks = uniform_annotations("p0", 100, 3, {});
  CHECK_THROWS_WITH_AS(segment_recording(rec, tracks), doctest::Contains("shorter"), DataError);
}

TEST_CASE("each interior 4 s cell is covered by exactly four segments") {
  const int seconds = 120;
  const int n = segment_count_for_duration(seconds);
  const int n_cells = seconds / 4;
  for (int c = 0; c < n_cells; ++c) {
    int covering = 0;
    for (int g = 0; g < n; ++g) {
      const int start = g * kSegmentStrideS;
      if (start <= c * 4 && (c + 1) * 4 <= start + kSegmentDurationS) ++covering;
    }
    const bool interior = c >= 3 && c < n_cells - 3;
    if (interior) CHECK(covering == 4);
    CHECK(covering >= 1);
    CHECK(covering <= 4);
  }
}

TEST_CASE("balancing subsamples the majority class only") {
  auto make_set = [](int seizures, int nonseizures) {
    SegmentSet set;
    for (int i = 0; i < seizures + nonseizures; ++i) {
      Segment seg;
      seg.patient_id = "p0";
      seg.start_s = i * 4;
      seg.label = i < seizures ? SegmentLabel::Seizure : SegmentLabel::NonSeizure;
      set.segments.push_back(std::move(seg));
    }
    return set;
  };

  Rng rng(5);
  auto balanced = balance_training_set(make_set(100, 900), rng);
  CHECK(balanced.count(SegmentLabel::Seizure) == 100);
  CHECK(balanced.count(SegmentLabel::NonSeizure) == 100);

  // every seizure kept, no duplicates
  std::vector<int> starts;
  for (const auto& seg : balanced.segments) starts.push_back(seg.start_s);
  std::sort(starts.begin(), starts.end());
  CHECK(std::adjacent_find(starts.begin(), starts.end()) == starts.end());
  for (int i = 0; i < 100; ++i)
    CHECK(std::find(starts.begin(), starts.end(), i * 4) != starts.end());

  auto unchanged = balance_training_set(make_set(50, 40), rng);
  CHECK(unchanged.size() == 90);

  CHECK_THROWS_AS(balance_training_set(make_set(0, 10), rng), DataError);

  auto mixed = make_set(5, 5);
  mixed.segments[0].label = SegmentLabel::Mixed;
  CHECK_THROWS_AS(balance_training_set(mixed, rng), std::invalid_argument);

  // deterministic under the seed
  Rng r1(77), r2(77);
  auto b1 = balance_training_set(make_set(30, 200), r1);
  auto b2 = balance_training_set(make_set(30, 200), r2);
  REQUIRE(b1.size() == b2.size());
  for (std::size_t i = 0; i < b1.size(); ++i)
    CHECK(b1.segments[i].start_s == b2.segments[i].start_s);
}
