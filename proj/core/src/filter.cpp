#include "nsda/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace nsda::signal {

namespace {

using cd = std::complex<double>;
constexpr double kPi = std::numbers::pi;

struct Zpk {
  std::vector<cd> zeros;
  std::vector<cd> poles;
  double gain = 1.0;
};

// Analog Chebyshev Type II low-pass prototype with the stopband edge at
// omega = 1 rad/s and `atten_db` minimum stopband attenuation.
Zpk cheby2_prototype(int n, double atten_db) {
  const double de = 1.0 / std::sqrt(std::pow(10.0, atten_db / 10.0) - 1.0);
  const double mu = std::asinh(1.0 / de) / n;

  Zpk zpk;
  for (int m = -n + 1; m <= n - 1; m += 2) {
    const double theta = kPi * m / (2.0 * n);
    if (m != 0) zpk.zeros.emplace_back(0.0, 1.0 / std::sin(theta));
    const cd base = -std::exp(cd(0.0, theta));
    const cd p(std::sinh(mu) * base.real(), std::cosh(mu) * base.imag());
    zpk.poles.push_back(1.0 / p);
  }

  cd num(1.0, 0.0), den(1.0, 0.0);
  for (const auto& p : zpk.poles) num *= -p;
  for (const auto& z : zpk.zeros) den *= -z;
  zpk.gain = (num / den).real();
  return zpk;
}

// Low-pass (stopband edge 1 rad/s) to band-pass with edges w1 < w2 rad/s.
Zpk lp_to_bp(const Zpk& lp, double w1, double w2) {
  const double bw = w2 - w1;
  const double wo = std::sqrt(w1 * w2);
  const int degree = static_cast<int>(lp.poles.size() - lp.zeros.size());

  auto transform = [&](const std::vector<cd>& roots) {
    std::vector<cd> out;
    out.reserve(roots.size() * 2);
    for (const auto& root : roots) {
      const cd scaled = root * (bw / 2.0);
      const cd disc = std::sqrt(scaled * scaled - wo * wo);
      out.push_back(scaled + disc);
      out.push_back(scaled - disc);
    }
    return out;
  };

  Zpk bp;
  bp.zeros = transform(lp.zeros);
  bp.poles = transform(lp.poles);
  for (int i = 0; i < degree; ++i) bp.zeros.emplace_back(0.0, 0.0);
  bp.gain = lp.gain * std::pow(bw, degree);
  return bp;
}

// Bilinear transform, s = 2 fs (z-1)/(z+1).
Zpk bilinear(const Zpk& analog, double fs) {
  const double fs2 = 2.0 * fs;
  Zpk digital;
  cd num(1.0, 0.0), den(1.0, 0.0);
  for (const auto& z : analog.zeros) {
    digital.zeros.push_back((fs2 + z) / (fs2 - z));
    num *= fs2 - z;
  }
  for (const auto& p : analog.poles) {
    digital.poles.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  const int degree = static_cast<int>(analog.poles.size() - analog.zeros.size());
  for (int i = 0; i < degree; ++i) digital.zeros.emplace_back(-1.0, 0.0);
  digital.gain = analog.gain * (num / den).real();
  return digital;
}

// A conjugate pair or two reals collapsed to a monic quadratic
// z^2 + c1 z + c2, with a representative root kept for pairing.
struct Quad {
  double c1, c2;
  cd rep;
};

std::vector<Quad> group_pairs(std::vector<cd> roots, const char* what) {
  const double tol = 1e-8;
  std::vector<double> reals;
  std::vector<Quad> quads;
  for (const auto& r : roots) {
    if (std::abs(r.imag()) <= tol * (1.0 + std::abs(r))) {
      reals.push_back(r.real());
    } else if (r.imag() > 0.0) {
      quads.push_back({-2.0 * r.real(), std::norm(r), r});
    }
    // lower-half roots are the conjugates of the kept ones
  }
  if (reals.size() % 2 != 0)
    throw std::runtime_error(std::string("unpaired real ") + what + " in filter design");
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    quads.push_back({-(reals[i] + reals[i + 1]), reals[i] * reals[i + 1], cd(reals[i], 0.0)});
  }
  return quads;
}

std::vector<Sos> to_sections(const Zpk& zpk) {
  auto pole_quads = group_pairs(zpk.poles, "poles");
  auto zero_quads = group_pairs(zpk.zeros, "zeros");
  if (pole_quads.size() != zero_quads.size())
    throw std::runtime_error("pole/zero pair count mismatch in filter design");

  // Poles closest to the unit circle first; each takes its nearest zero pair.
  std::sort(pole_quads.begin(), pole_quads.end(), [](const Quad& a, const Quad& b) {
    return std::abs(1.0 - std::abs(a.rep)) < std::abs(1.0 - std::abs(b.rep));
  });

  std::vector<Sos> sections;
  std::vector<bool> used(zero_quads.size(), false);
  for (const auto& pq : pole_quads) {
    std::size_t best = zero_quads.size();
    double best_dist = 0.0;
    for (std::size_t i = 0; i < zero_quads.size(); ++i) {
      if (used[i]) continue;
      const double d = std::abs(zero_quads[i].rep - pq.rep);
      if (best == zero_quads.size() || d < best_dist) {
        best = i;
        best_dist = d;
      }
    }
    used[best] = true;
    const auto& zq = zero_quads[best];
    sections.push_back({1.0, zq.c1, zq.c2, pq.c1, pq.c2});
  }

  // Overall gain into the first section.
  sections.front().b0 *= zpk.gain;
  sections.front().b1 *= zpk.gain;
  sections.front().b2 *= zpk.gain;
  return sections;
}

}  // namespace

bool IirFilter::is_stable() const {
  for (const auto& s : sections) {
    // Jury criterion for z^2 + a1 z + a2.
    if (!(std::abs(s.a2) < 1.0 && std::abs(s.a1) < 1.0 + s.a2)) return false;
  }
  return true;
}

IirFilter design_cheby2_bandpass(int order, double f_low_hz, double f_high_hz,
                                 double stopband_atten_db, double sample_rate_hz) {
  if (order < 2 || order % 2 != 0)
    throw std::invalid_argument("band-pass order must be a positive even integer");
  if (!(sample_rate_hz > 0.0)) throw std::invalid_argument("invalid sample rate");
  if (!(f_low_hz > 0.0) || !(f_low_hz < f_high_hz) || !(f_high_hz < sample_rate_hz / 2.0))
    throw std::invalid_argument("band edges must satisfy 0 < low < high < Nyquist");
  if (!(stopband_atten_db > 0.0)) throw std::invalid_argument("attenuation must be positive");

  const Zpk lp = cheby2_prototype(order / 2, stopband_atten_db);

  // Prewarp the band edges so the bilinear transform lands them exactly.
  const double w1 = 2.0 * sample_rate_hz * std::tan(kPi * f_low_hz / sample_rate_hz);
  const double w2 = 2.0 * sample_rate_hz * std::tan(kPi * f_high_hz / sample_rate_hz);

  const Zpk digital = bilinear(lp_to_bp(lp, w1, w2), sample_rate_hz);

  for (const auto& p : digital.poles) {
    if (!(std::abs(p) < 1.0))
      throw std::runtime_error("filter design produced an unstable pole (|p| = " +
                               std::to_string(std::abs(p)) + ")");
  }

  IirFilter filter;
  filter.sections = to_sections(digital);
  filter.order = order;
  filter.f_low_hz = f_low_hz;
  filter.f_high_hz = f_high_hz;
  filter.stopband_atten_db = stopband_atten_db;
  filter.design_rate_hz = sample_rate_hz;
  if (!filter.is_stable()) throw std::runtime_error("filter design produced unstable sections");
  return filter;
}

std::complex<double> frequency_response(const IirFilter& filter, double freq_hz) {
  const cd zinv = std::exp(cd(0.0, -2.0 * kPi * freq_hz / filter.design_rate_hz));
  cd h(1.0, 0.0);
  for (const auto& s : filter.sections) {
    h *= (s.b0 + s.b1 * zinv + s.b2 * zinv * zinv) / (1.0 + s.a1 * zinv + s.a2 * zinv * zinv);
  }
  return h;
}

std::vector<double> apply_filter(const IirFilter& filter, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  for (const auto& s : filter.sections) {
    double w1 = 0.0, w2 = 0.0;
    for (auto& v : y) {
      const double in = v;
      const double out = s.b0 * in + w1;
      w1 = s.b1 * in - s.a1 * out + w2;
      w2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

Recording filter_and_decimate(const Recording& rec, const IirFilter& filter, int target_rate_hz) {
  rec.validate();
  if (target_rate_hz <= 0) throw std::invalid_argument("invalid target rate");
  const double factor = rec.sample_rate_hz / target_rate_hz;
  const double rounded = std::round(factor);
  if (std::abs(factor - rounded) > 1e-9 || rounded < 1.0) {
    std::ostringstream os;
    os << "non-integer decimation factor " << factor;
    throw DataError(os.str());
  }
  if (filter.f_high_hz > target_rate_hz / 2.0)
    throw std::invalid_argument("filter passband exceeds target Nyquist; no anti-alias margin");

  const auto k = static_cast<std::size_t>(rounded);
  Recording out;
  out.patient_id = rec.patient_id;
  out.sample_rate_hz = target_rate_hz;
  out.channels = rec.channels;
  out.samples.reserve(rec.samples.size());
  for (const auto& channel : rec.samples) {
    const auto filtered = apply_filter(filter, channel);
    std::vector<double> decimated;
    decimated.reserve(filtered.size() / k + 1);
    for (std::size_t i = 0; i < filtered.size(); i += k) decimated.push_back(filtered[i]);
    out.samples.push_back(std::move(decimated));
  }
  return out;
}

RescaleResult rescale_to_int16(const Recording& rec) {
  RescaleResult result;
  result.recording = rec;
  for (auto& channel : result.recording.samples) {
    for (auto& v : channel) {
      double q = std::round(v);  // half away from zero
      if (q > 32767.0) {
        q = 32767.0;
        ++result.saturated;
      } else if (q < -32767.0) {
        q = -32767.0;
        ++result.saturated;
      }
      v = q;
    }
  }
  return result;
}

}  // namespace nsda::signal
