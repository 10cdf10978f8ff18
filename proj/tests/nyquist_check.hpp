#pragma once

// Energy above the Nyquist-adjacent cutoff for randomly drawn harmonic
// controls. Each control set holds f0, A and c constant so the only content
// near the top of the band would come from unmasked (aliasing) partials.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "smsd/smsd.hpp"

namespace smsd::fixtures {

inline constexpr std::size_t kNyquistSegment = 4096;
/// Partials closer than this below the cutoff would leak into the measured
/// band through the window's main lobe; such draws are redrawn.
inline constexpr double kNyquistGuardHz = 40.0;

inline double nyquist_cutoff(double sample_rate) { return sample_rate / 2.0 * (1.0 - 1e-3); }

/// 4-term Blackman-Harris window (-92 dB sidelobes).
inline std::vector<double> blackman_harris(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    w[i] = 0.35875 - 0.48829 * std::cos(x) + 0.14128 * std::cos(2 * x) - 0.01168 * std::cos(3 * x);
  }
  return w;
}

struct NyquistTrial {
  double f0 = 0.0;
  double relative_db = 0.0;  // top-band energy relative to total
};

inline SynthControls random_constant_controls(std::mt19937_64& rng, std::size_t frames, std::size_t harmonics) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cutoff = nyquist_cutoff(kSampleRate);
  double f0 = 0.0;
  for (bool ok = false; !ok;) {
    f0 = 50.0 + 3950.0 * u(rng);
    ok = true;
    for (std::size_t k = 1; k * f0 < kSampleRate / 2.0; ++k)
      if (k * f0 > cutoff - kNyquistGuardHz) ok = false;
  }
  SynthControls c;
  c.f0_hz = FrameSeries(std::vector<double>(frames, f0), 1, kFrameRate);
  c.amplitude = FrameSeries(std::vector<double>(frames, 0.05 + u(rng)), 1, kFrameRate);
  std::vector<double> dist(harmonics);
  for (double& v : dist) v = u(rng);
  std::vector<double> rows;
  for (std::size_t t = 0; t < frames; ++t) rows.insert(rows.end(), dist.begin(), dist.end());
  c.harm_distribution = FrameSeries(std::move(rows), harmonics, kFrameRate);
  c.noise_magnitudes = FrameSeries(frames, 2, kFrameRate);
  return c;
}

inline NyquistTrial nyquist_trial(std::mt19937_64& rng, std::size_t harmonics = kDefaultHarmonics) {
  const std::size_t frames = 80;  // 5120 samples; the middle 4096 are analysed
  const auto c = random_constant_controls(rng, frames, harmonics);
  const auto y = harmonic_synth(c);
  const auto w = blackman_harris(kNyquistSegment);
  const std::size_t start = (y.size() - kNyquistSegment) / 2;
  std::vector<double> seg(kNyquistSegment);
  for (std::size_t i = 0; i < kNyquistSegment; ++i) seg[i] = y.samples[start + i] * w[i];
  const auto spec = rfft<double>(seg, kNyquistSegment);
  const double bin_hz = kSampleRate / static_cast<double>(kNyquistSegment);
  double total = 0.0, top = 0.0;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double e = std::norm(spec[k]);
    total += e;
    if (static_cast<double>(k) * bin_hz >= nyquist_cutoff(kSampleRate)) top += e;
  }
  return {c.f0_hz.data[0], 10.0 * std::log10(top / total + 1e-300)};
}

}  // namespace smsd::fixtures
