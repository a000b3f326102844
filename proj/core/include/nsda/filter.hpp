#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "nsda/types.hpp"

namespace nsda::signal {

// One second-order section, normalized so a0 = 1.
struct Sos {
  double b0, b1, b2;
  double a1, a2;
};

struct IirFilter {
  std::vector<Sos> sections;
  int order = 0;
  double f_low_hz = 0.0;
  double f_high_hz = 0.0;
  double stopband_atten_db = 0.0;
  double design_rate_hz = 0.0;

  bool is_stable() const;
};

// Band-pass Chebyshev Type II design. `order` is the order of the final
// band-pass cascade (even; the analog low-pass prototype has order/2).
// f_low/f_high are the stopband edges: |H| reaches -stopband_atten_db there
// and stays at or below it outside the band. Route: analog prototype ->
// low-pass-to-band-pass transform -> bilinear transform with frequency
// prewarping -> second-order sections.
IirFilter design_cheby2_bandpass(int order, double f_low_hz, double f_high_hz,
                                 double stopband_atten_db, double sample_rate_hz);

// H(e^{j 2 pi f / rate}) of the cascade.
std::complex<double> frequency_response(const IirFilter& filter, double freq_hz);

// Causal forward filtering, direct form II transposed, zero initial state.
std::vector<double> apply_filter(const IirFilter& filter, std::span<const double> x);

// Forward-filter every channel, then keep every k-th sample. The original
// rate must be an integer multiple of target_rate_hz.
Recording filter_and_decimate(const Recording& rec, const IirFilter& filter,
                              int target_rate_hz = kTargetRateHz);

struct RescaleResult {
  Recording recording;
  std::uint64_t saturated = 0;  // samples clamped at +/-32767
};

// Quantize at 1 count/uV: round half away from zero, saturate to the int16
// range, store back as reals.
RescaleResult rescale_to_int16(const Recording& rec);

}  // namespace nsda::signal
