#pragma once

// Non-learned DSP primitives: STFT, MFCC, A-weighted loudness and the two
// frame-to-sample upsamplers used by the synthesizers.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <vector>

#include "smsd/audio.hpp"
#include "smsd/error.hpp"
#include "smsd/fft.hpp"

namespace smsd {

// ---------------------------------------------------------------------------
// Shared helpers (also used by the differentiable ops)

/// Mirror-reflects an out-of-range index into [0, len). Handles any distance.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t len) {
  if (len == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(len)) i = period - i;
  return static_cast<std::size_t>(i);
}

/// Periodic Hann window; w[n/2] == 1.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Number of centered frames for a signal of `len` samples.
inline std::size_t centered_frame_count(std::size_t len, std::size_t hop) { return (len + hop - 1) / hop; }

/// Sample index feeding position `j` of centered frame `t` (reflection padded).
inline std::size_t frame_source_index(std::size_t t, std::size_t j, std::size_t fft_size, std::size_t hop,
                                      std::size_t len) {
  const auto pos = static_cast<std::ptrdiff_t>(t * hop + j) - static_cast<std::ptrdiff_t>(fft_size / 2);
  return reflect_index(pos, len);
}

inline void check_stft_args(std::size_t len, std::size_t fft_size, std::size_t hop) {
  if (len == 0) throw Error("stft: empty audio");
  if (!is_power_of_two(fft_size) || fft_size < 64 || fft_size > 2048)
    throw Error("stft: fft_size must be a power of two in [64, 2048], got " + std::to_string(fft_size));
  if (hop == 0 || hop > fft_size) throw Error("stft: hop must satisfy 0 < hop <= fft_size");
}

/// Interpolation weights for a centered Hamming overlap-add at `hop`
/// samples per frame. Sample n blends frame n/hop (weight `w_left`) with the
/// next frame (weight `w_right`); weights are normalized to sum to one.
struct HammingTap {
  std::size_t frame;
  double w_left;
  double w_right;
};

inline double hamming_2hop(std::size_t offset, std::size_t hop) {
  return 0.54 - 0.46 * std::cos(std::numbers::pi * static_cast<double>(offset) / static_cast<double>(hop));
}

inline HammingTap hamming_tap(std::size_t n, std::size_t hop, std::size_t frames) {
  const std::size_t t = n / hop;
  const std::size_t r = n - t * hop;
  double wl = hamming_2hop(r + hop, hop);
  double wr = t + 1 < frames ? hamming_2hop(r, hop) : 0.0;
  const double s = wl + wr;
  return {t, wl / s, wr / s};
}

/// Align-corners linear interpolation position for output i of target_len.
struct LinearTap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

inline LinearTap linear_tap(std::size_t i, std::size_t src_len, std::size_t target_len) {
  if (src_len == 1 || target_len == 1) return {0, 0, 0.0};
  const double pos = static_cast<double>(i) * static_cast<double>(src_len - 1) / static_cast<double>(target_len - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo >= src_len - 1) return {src_len - 1, src_len - 1, 0.0};
  return {lo, lo + 1, pos - static_cast<double>(lo)};
}

// ---------------------------------------------------------------------------
// Operations

/// Hann-windowed magnitude STFT with centered, reflection-padded frames.
inline Spectrogram stft(const AudioBuffer& audio, std::size_t fft_size, std::size_t hop) {
  check_stft_args(audio.size(), fft_size, hop);
  const std::size_t len = audio.size();
  const auto window = hann_window(fft_size);
  Spectrogram spec;
  spec.fft_size = fft_size;
  spec.hop = hop;
  spec.num_frames = centered_frame_count(len, hop);
  const std::size_t bins = spec.num_bins();
  spec.mags.resize(spec.num_frames * bins);
  std::vector<std::complex<double>> buf(fft_size);
  const auto& plan = fft_plan<double>(fft_size);
  for (std::size_t t = 0; t < spec.num_frames; ++t) {
    for (std::size_t j = 0; j < fft_size; ++j)
      buf[j] = audio.samples[frame_source_index(t, j, fft_size, hop, len)] * window[j];
    plan.forward(buf);
    for (std::size_t k = 0; k < bins; ++k) spec.mags[t * bins + k] = std::abs(buf[k]);
  }
  return spec;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular mel filterbank [bands x bins] on HTK mel spacing.
inline std::vector<double> mel_filterbank(std::size_t bands, std::size_t fft_size, double sample_rate, double f_lo,
                                          double f_hi) {
  const std::size_t bins = fft_size / 2 + 1;
  std::vector<double> edges(bands + 2);
  const double m_lo = hz_to_mel(f_lo), m_hi = hz_to_mel(f_hi);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(bands + 1));
  std::vector<double> fb(bands * bins, 0.0);
  for (std::size_t m = 0; m < bands; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb[m * bins + k] = w;
    }
  }
  return fb;
}

struct MfccSettings {
  static constexpr std::size_t kFftSize = 1024;
  static constexpr std::size_t kHop = 128;
  static constexpr std::size_t kMelBands = 128;
  static constexpr std::size_t kCoefficients = 30;
  static constexpr double kMelLow = 20.0;
  static constexpr double kMelHigh = 8000.0;
  static constexpr double kLogFloor = 1e-5;
};

/// 30 MFCCs at 125 frames/s: |STFT| (1024/128) -> 128 mel bands
/// (20 Hz..8 kHz) -> log(max(x, 1e-5)) -> orthonormal DCT-II, coefficients 0..29.
inline FrameSeries mfcc(const AudioBuffer& audio) {
  using S = MfccSettings;
  if (audio.size() < S::kFftSize) throw Error("mfcc: audio shorter than one 1024-sample window");
  const Spectrogram spec = stft(audio, S::kFftSize, S::kHop);
  const std::size_t bins = spec.num_bins();
  static const std::vector<double> fb = mel_filterbank(S::kMelBands, S::kFftSize, kSampleRate, S::kMelLow, S::kMelHigh);
  // Orthonormal DCT-II basis, rows = output coefficient.
  static const std::vector<double> dct = [] {
    std::vector<double> d(S::kCoefficients * S::kMelBands);
    const double n = static_cast<double>(S::kMelBands);
    for (std::size_t c = 0; c < S::kCoefficients; ++c)
      for (std::size_t m = 0; m < S::kMelBands; ++m) {
        const double scale = c == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        d[c * S::kMelBands + m] =
            scale * std::cos(std::numbers::pi * static_cast<double>(c) * (static_cast<double>(m) + 0.5) / n);
      }
    return d;
  }();
  FrameSeries out(spec.num_frames, S::kCoefficients, kMfccFrameRate);
  std::vector<double> logmel(S::kMelBands);
  for (std::size_t t = 0; t < spec.num_frames; ++t) {
    for (std::size_t m = 0; m < S::kMelBands; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += fb[m * bins + k] * spec.mags[t * bins + k];
      logmel[m] = std::log(std::max(acc, S::kLogFloor));
    }
    for (std::size_t c = 0; c < S::kCoefficients; ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < S::kMelBands; ++m) acc += dct[c * S::kMelBands + m] * logmel[m];
      out.at(t, c) = acc;
    }
  }
  return out;
}

/// IEC 61672 A-weighting gain in dB at frequency `hz` (-inf at DC).
inline double a_weighting_db(double hz) {
  if (hz <= 0.0) return -std::numeric_limits<double>::infinity();
  const double f2 = hz * hz;
  const double c1 = 20.598997 * 20.598997, c2 = 107.65265 * 107.65265, c3 = 737.86223 * 737.86223,
               c4 = 12194.217 * 12194.217;
  const double ra = c4 * f2 * f2 / ((f2 + c1) * std::sqrt((f2 + c2) * (f2 + c3)) * (f2 + c4));
  return 20.0 * std::log10(ra) + 2.0;
}

struct LoudnessSettings {
  static constexpr std::size_t kFftSize = 2048;
  static constexpr std::size_t kHop = 64;
  static constexpr double kFloorDb = -120.0;
};

/// Summed rfft power of a full-scale Hann-windowed sine at a bin center:
/// (N/4)^2 + 2 (N/8)^2. This is the 0 dB reference.
inline double full_scale_sine_power(std::size_t fft_size) {
  const double n = static_cast<double>(fft_size);
  return 3.0 * n * n / 32.0;
}

/// A-weighted loudness in dB re. a full-scale sine, 250 frames/s, floored at -120 dB.
inline FrameSeries a_weighted_loudness(const AudioBuffer& audio) {
  using S = LoudnessSettings;
  if (audio.empty()) throw Error("a_weighted_loudness: empty audio");
  const Spectrogram spec = stft(audio, S::kFftSize, S::kHop);
  const std::size_t bins = spec.num_bins();
  std::vector<double> gain(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double db = a_weighting_db(static_cast<double>(k) * audio.sample_rate / static_cast<double>(S::kFftSize));
    gain[k] = std::isfinite(db) ? std::pow(10.0, db / 10.0) : 0.0;
  }
  const double ref = full_scale_sine_power(S::kFftSize);
  FrameSeries out(spec.num_frames, 1, kFrameRate);
  for (std::size_t t = 0; t < spec.num_frames; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double m = spec.mags[t * bins + k];
      acc += m * m * gain[k];
    }
    const double db = acc > 0.0 ? 10.0 * std::log10(acc / ref) : S::kFloorDb;
    out.at(t) = std::max(db, S::kFloorDb);
  }
  return out;
}

/// Align-corners piecewise-linear upsampling of a dim-1 series to target_len.
inline std::vector<double> upsample_bilinear(const FrameSeries& frames, std::size_t target_len) {
  if (frames.empty()) throw Error("upsample_bilinear: empty series");
  if (frames.dim != 1) throw ShapeError("upsample_bilinear: expects dim 1");
  if (target_len == 0) throw Error("upsample_bilinear: target_len must be >= 1");
  const std::size_t n = frames.frames();
  std::vector<double> out(target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    const auto tap = linear_tap(i, n, target_len);
    out[i] = frames.data[tap.lo] + tap.frac * (frames.data[tap.hi] - frames.data[tap.lo]);
  }
  return out;
}

/// Hamming overlap-add upsampling: each frame is spread by a 2*hop Hamming
/// window centered at t*hop, normalized to a partition of unity. Returns
/// [frames*hop x dim] at frame_rate*hop.
inline FrameSeries smooth_upsample_hamming(const FrameSeries& frames, std::size_t hop) {
  if (hop == 0) throw Error("smooth_upsample_hamming: hop must be >= 1");
  const std::size_t n_frames = frames.frames();
  FrameSeries out(n_frames * hop, frames.dim, frames.frame_rate * static_cast<double>(hop));
  for (std::size_t n = 0; n < n_frames * hop; ++n) {
    const auto tap = hamming_tap(n, hop, n_frames);
    for (std::size_t d = 0; d < frames.dim; ++d) {
      double v = tap.w_left * frames.at(tap.frame, d);
      if (tap.w_right > 0.0) v += tap.w_right * frames.at(tap.frame + 1, d);
      out.at(n, d) = v;
    }
  }
  return out;
}

}  // namespace smsd
