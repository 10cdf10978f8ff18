#pragma once

// Harmonic-plus-noise synthesis, trainable reverb and the multi-scale
// spectral loss. Each operation exists as a graph builder over tape Vars
// (templated on precision) and as a plain double-precision wrapper.

#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "smsd/ad/dsp_ops.hpp"
#include "smsd/ad/ops.hpp"
#include "smsd/audio.hpp"
#include "smsd/error.hpp"
#include "smsd/signal.hpp"

namespace smsd {

inline constexpr std::size_t kDefaultHarmonics = 60;
inline constexpr std::size_t kDefaultNoiseBands = 65;
inline constexpr std::size_t kNoiseFftSize = 128;
inline constexpr std::size_t kNoiseHop = 64;
inline constexpr std::size_t kReverbLength = 16000;
inline constexpr std::array<std::size_t, 6> kLossFftSizes = {2048, 1024, 512, 256, 128, 64};
inline constexpr double kLogMagnitudeOffset = 1e-7;

/// Decoder outputs, all at 250 frames/s with equal frame counts.
struct SynthControls {
  FrameSeries amplitude;          // A(n), dim 1
  FrameSeries harm_distribution;  // c_k(n), dim K
  FrameSeries noise_magnitudes;   // H_l, dim N
  FrameSeries f0_hz;              // dim 1

  std::size_t frames() const { return f0_hz.frames(); }

  /// Number of control values consumed by the synthesizers (f0 excluded).
  std::size_t control_dimensions() const {
    return amplitude.data.size() + harm_distribution.data.size() + noise_magnitudes.data.size();
  }

  void validate() const {
    const std::size_t n = f0_hz.frames();
    if (amplitude.dim != 1 || f0_hz.dim != 1) throw ShapeError("synth controls: amplitude and f0 must be dim 1");
    if (amplitude.frames() != n || harm_distribution.frames() != n || noise_magnitudes.frames() != n)
      throw ShapeError("synth controls: frame count mismatch (f0 " + std::to_string(n) + ", amplitude " +
                       std::to_string(amplitude.frames()) + ", harmonics " + std::to_string(harm_distribution.frames()) +
                       ", noise " + std::to_string(noise_magnitudes.frames()) + ")");
  }
};

struct ReverbParams {
  std::vector<double> impulse_response = std::vector<double>(kReverbLength, 0.0);
};

struct LossReport {
  double total = 0.0;
  std::map<std::size_t, double> per_fft;
};

inline std::size_t samples_per_frame(double sample_rate, double frame_rate) {
  const double hop = sample_rate / frame_rate;
  if (hop < 1.0 || std::abs(hop - std::round(hop)) > 1e-9)
    throw Error("sample rate must be an integer multiple of the frame rate");
  return static_cast<std::size_t>(std::lround(hop));
}

template <class T>
ad::Tensor<T> to_tensor(const FrameSeries& f) {
  return ad::Tensor<T>({f.frames(), f.dim}, std::vector<T>(f.data.begin(), f.data.end()));
}

template <class T>
ad::Tensor<T> to_tensor(const AudioBuffer& a) {
  return ad::Tensor<T>({a.size()}, std::vector<T>(a.samples.begin(), a.samples.end()));
}

template <class T>
AudioBuffer to_audio(const ad::Var<T>& v, double sample_rate) {
  const auto& vals = v.value().values;
  return AudioBuffer(std::vector<double>(vals.begin(), vals.end()), sample_rate);
}

// ---------------------------------------------------------------------------
// Graph builders

/// Zeroes harmonics at or above Nyquist per frame and renormalizes each row
/// of the distribution to sum to one. Rows with no audible harmonic stay zero.
template <class T>
ad::Var<T> mask_and_normalize(const ad::Var<T>& distribution, const std::vector<double>& f0_frames, double sample_rate) {
  const std::size_t frames = distribution.rows(), k = distribution.cols();
  if (f0_frames.size() != frames) throw ShapeError("harmonic distribution and f0 frame counts differ");
  ad::Tensor<T> mask({frames, k});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t h = 0; h < k; ++h)
      mask.at(t, h) = (f0_frames[t] > 0.0 && static_cast<double>(h + 1) * f0_frames[t] < sample_rate / 2.0) ? T(1) : T(0);
  auto& tape = distribution.tape();
  auto masked = ad::mul(distribution, tape.constant(std::move(mask)));
  auto denom = ad::power(ad::add_scalar(ad::row_sum(masked), T(1e-12)), T(-1));
  return ad::scale_rows(masked, denom);
}

/// Additive synth: x(n) = A(n) sum_k c_k(n) sin(k phi(n)). f0 is bilinearly
/// upsampled, A and c are Hamming-smoothed to audio rate.
template <class T>
ad::Var<T> harmonic_synth(const ad::Var<T>& amplitude, const ad::Var<T>& distribution,
                          const std::vector<double>& f0_frames, double sample_rate, double frame_rate = kFrameRate) {
  const std::size_t frames = f0_frames.size();
  if (amplitude.rows() != frames || distribution.rows() != frames)
    throw ShapeError("harmonic_synth: frame count mismatch (f0 " + std::to_string(frames) + ", amplitude " +
                     ad::shape_str(amplitude.shape()) + ", distribution " + ad::shape_str(distribution.shape()) + ")");
  const std::size_t hop = samples_per_frame(sample_rate, frame_rate);
  const std::size_t n = frames * hop;
  auto c = mask_and_normalize(distribution, f0_frames, sample_rate);
  auto amp_up = ad::upsample_hamming(amplitude, hop);
  auto c_up = ad::upsample_hamming(c, hop);
  FrameSeries f0_series(std::vector<double>(f0_frames), 1, frame_rate);
  auto f0_up = std::make_shared<const std::vector<double>>(upsample_bilinear(f0_series, n));
  return ad::harmonic_oscillator(ad::scale_rows(c_up, amp_up), f0_up, sample_rate);
}

/// Linear interpolation matrix [from x to] mapping N control points onto bins.
template <class T>
ad::Tensor<T> band_interpolation(std::size_t from, std::size_t to) {
  ad::Tensor<T> m({from, to});
  for (std::size_t b = 0; b < to; ++b) {
    const auto tap = linear_tap(b, from, to);
    m.at(tap.lo, b) += static_cast<T>(1.0 - tap.frac);
    if (tap.frac > 0.0) m.at(tap.hi, b) += static_cast<T>(tap.frac);
  }
  return m;
}

/// sqrt-Hann window; analysis * synthesis is a periodic Hann (sums to one at hop N/2).
inline std::vector<double> sqrt_hann_window(std::size_t n) {
  auto w = hann_window(n);
  for (double& v : w) v = std::sqrt(v);
  return w;
}

/// Seeded excitation spectra rfft(sqrt_hann * uniform(-1, 1)) per frame.
template <class T>
std::shared_ptr<const std::vector<std::complex<T>>> noise_spectra(std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const auto w = sqrt_hann_window(kNoiseFftSize);
  const std::size_t bins = kNoiseFftSize / 2 + 1;
  auto out = std::make_shared<std::vector<std::complex<T>>>(frames * bins);
  std::vector<T> buf(kNoiseFftSize);
  for (std::size_t l = 0; l < frames; ++l) {
    for (std::size_t j = 0; j < kNoiseFftSize; ++j) buf[j] = static_cast<T>(w[j] * uni(rng));
    const auto spec = rfft<T>(buf, kNoiseFftSize);
    std::copy(spec.begin(), spec.end(), out->begin() + static_cast<std::ptrdiff_t>(l * bins));
  }
  return out;
}

/// Filtered-noise synth: per frame, seeded white noise is sqrt-Hann windowed,
/// its spectrum multiplied by H_l (N points interpolated onto the 65 bins of a
/// 128-point FFT), inverse transformed, sqrt-Hann windowed again and
/// overlap-added at hop 64.
template <class T>
ad::Var<T> filtered_noise(const ad::Var<T>& magnitudes, std::uint64_t seed, double sample_rate = kSampleRate,
                          double frame_rate = kFrameRate) {
  ad::detail::require_matrix("filtered_noise", magnitudes);
  const std::size_t frames = magnitudes.rows(), n_bands = magnitudes.cols();
  if (n_bands < 2) throw ShapeError("filtered_noise: need at least 2 noise magnitudes");
  for (T v : magnitudes.value().values)
    if (v < T(0)) throw Error("filtered_noise: negative noise magnitude");
  if (samples_per_frame(sample_rate, frame_rate) != kNoiseHop)
    throw Error("filtered_noise: expects 64 samples per frame");
  const std::size_t bins = kNoiseFftSize / 2 + 1;
  auto& tape = magnitudes.tape();
  auto h = n_bands == bins ? magnitudes : ad::matmul(magnitudes, tape.constant(band_interpolation<T>(n_bands, bins)));
  auto filtered = ad::filter_frames(h, noise_spectra<T>(frames, seed), kNoiseFftSize);
  const auto w = sqrt_hann_window(kNoiseFftSize);
  auto synth_window = tape.constant(ad::Tensor<T>({kNoiseFftSize}, std::vector<T>(w.begin(), w.end())));
  return ad::overlap_add(ad::mul_row(filtered, synth_window), kNoiseHop, frames * kNoiseHop);
}

/// out = dry + dry * ir, with tap 0 of the IR excluded from the wet path.
template <class T>
ad::Var<T> apply_reverb(const ad::Var<T>& dry, const ad::Var<T>& impulse_response) {
  ad::Tensor<T> mask({impulse_response.size()}, std::vector<T>(impulse_response.size(), T(1)));
  mask[0] = T(0);
  auto ir = ad::mul(impulse_response, impulse_response.tape().constant(std::move(mask)));
  return ad::add(dry, ad::convolve(dry, ir));
}

template <class T>
struct LossTerms {
  ad::Var<T> total;
  std::map<std::size_t, ad::Var<T>> per_fft;
};

/// L = sum_i mean|S_i - S^_i| + mean|log(S_i + 1e-7) - log(S^_i + 1e-7)| over
/// FFT sizes 2048..64, hop = size/4.
template <class T>
LossTerms<T> spectral_loss(const ad::Var<T>& target, const ad::Var<T>& prediction) {
  if (target.size() != prediction.size())
    throw ShapeError("multiscale_spectral_loss: length mismatch (" + std::to_string(target.size()) + " vs " +
                     std::to_string(prediction.size()) + ")");
  LossTerms<T> out;
  std::optional<ad::Var<T>> total;
  const T offset = static_cast<T>(kLogMagnitudeOffset);
  for (std::size_t fft : kLossFftSizes) {
    auto s = ad::stft_mag(target, fft, fft / 4);
    auto s_hat = ad::stft_mag(prediction, fft, fft / 4);
    auto lin = ad::mean(ad::abs(ad::sub(s, s_hat)));
    auto lg = ad::mean(ad::abs(ad::sub(ad::log(ad::add_scalar(s, offset)), ad::log(ad::add_scalar(s_hat, offset)))));
    auto term = ad::add(lin, lg);
    out.per_fft.emplace(fft, term);
    total = total ? ad::add(*total, term) : term;
  }
  out.total = *total;
  return out;
}

/// Harmonic + noise (+ reverb) graph for one example.
template <class T>
ad::Var<T> render_graph(const ad::Var<T>& amplitude, const ad::Var<T>& distribution, const ad::Var<T>& noise,
                        const std::vector<double>& f0_frames, const std::optional<ad::Var<T>>& impulse_response,
                        std::uint64_t seed, double sample_rate = kSampleRate) {
  auto audio = ad::add(harmonic_synth(amplitude, distribution, f0_frames, sample_rate), filtered_noise(noise, seed, sample_rate));
  if (impulse_response) audio = apply_reverb(audio, *impulse_response);
  return audio;
}

// ---------------------------------------------------------------------------
// Plain wrappers

inline AudioBuffer harmonic_synth(const SynthControls& controls, double sample_rate = kSampleRate) {
  controls.validate();
  ad::Tape<double> tape;
  auto y = harmonic_synth(tape.constant(to_tensor<double>(controls.amplitude)),
                          tape.constant(to_tensor<double>(controls.harm_distribution)), controls.f0_hz.data, sample_rate,
                          controls.f0_hz.frame_rate);
  return to_audio(y, sample_rate);
}

inline AudioBuffer filtered_noise(const FrameSeries& noise_magnitudes, double sample_rate, std::uint64_t seed) {
  ad::Tape<double> tape;
  return to_audio(filtered_noise(tape.constant(to_tensor<double>(noise_magnitudes)), seed, sample_rate,
                                 noise_magnitudes.frame_rate),
                  sample_rate);
}

inline AudioBuffer apply_reverb(const AudioBuffer& dry, const ReverbParams& params) {
  if (dry.empty()) return dry;
  ad::Tape<double> tape;
  const auto& ir = params.impulse_response;
  auto out = apply_reverb(tape.constant(to_tensor<double>(dry)), tape.constant(ad::Tensor<double>({ir.size()}, ir)));
  return to_audio(out, dry.sample_rate);
}

inline LossReport multiscale_spectral_loss(const AudioBuffer& target, const AudioBuffer& prediction) {
  if (target.sample_rate != prediction.sample_rate) throw Error("multiscale_spectral_loss: sample rate mismatch");
  if (target.size() != prediction.size())
    throw ShapeError("multiscale_spectral_loss: length mismatch (" + std::to_string(target.size()) + " vs " +
                     std::to_string(prediction.size()) + ")");
  ad::Tape<double> tape;
  auto terms = spectral_loss(tape.constant(to_tensor<double>(target)), tape.constant(to_tensor<double>(prediction)));
  LossReport r;
  for (std::size_t fft : kLossFftSizes) {
    r.per_fft[fft] = terms.per_fft.at(fft).value()[0];
    r.total += r.per_fft[fft];
  }
  return r;
}

inline AudioBuffer render(const SynthControls& controls, const std::optional<ReverbParams>& reverb, std::uint64_t seed,
                          double sample_rate = kSampleRate) {
  controls.validate();
  ad::Tape<double> tape;
  std::optional<ad::Var<double>> ir;
  if (reverb) ir = tape.constant(ad::Tensor<double>({reverb->impulse_response.size()}, reverb->impulse_response));
  auto y = render_graph(tape.constant(to_tensor<double>(controls.amplitude)),
                        tape.constant(to_tensor<double>(controls.harm_distribution)),
                        tape.constant(to_tensor<double>(controls.noise_magnitudes)), controls.f0_hz.data, ir, seed,
                        sample_rate);
  return to_audio(y, sample_rate);
}

}  // namespace smsd
