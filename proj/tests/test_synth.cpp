#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>

#include "nyquist_check.hpp"
#include "op_cases.hpp"
#include "test_support.hpp"

using namespace smsd;
using namespace smsd::fixtures;

namespace {

constexpr std::size_t kFramesPerSecond = 250;

SynthControls constant_controls(std::size_t frames, double f0, double amp, std::vector<double> dist,
                                std::size_t n_noise, double noise) {
  SynthControls c;
  c.f0_hz = FrameSeries(std::vector<double>(frames, f0), 1, kFrameRate);
  c.amplitude = FrameSeries(std::vector<double>(frames, amp), 1, kFrameRate);
  std::vector<double> d;
  for (std::size_t t = 0; t < frames; ++t) d.insert(d.end(), dist.begin(), dist.end());
  c.harm_distribution = FrameSeries(std::move(d), dist.size(), kFrameRate);
  c.noise_magnitudes = FrameSeries(std::vector<double>(frames * n_noise, noise), n_noise, kFrameRate);
  return c;
}

std::vector<double> one_hot(std::size_t k, std::size_t size) {
  std::vector<double> v(size, 0.0);
  v[k] = 1.0;
  return v;
}

/// Welch power spectrum: mean |DFT|^2 over non-overlapping Hann frames.
std::vector<double> welch(const AudioBuffer& a, std::size_t n) {
  const auto w = hann_window(n);
  std::vector<double> acc(n / 2 + 1, 0.0);
  std::size_t count = 0;
  for (std::size_t start = 0; start + n <= a.size(); start += n, ++count) {
    std::vector<double> buf(n);
    for (std::size_t j = 0; j < n; ++j) buf[j] = a.samples[start + j] * w[j];
    const auto s = rfft<double>(buf, n);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += std::norm(s[k]);
  }
  for (double& v : acc) v /= static_cast<double>(count);
  return acc;
}

/// Standalone multi-scale loss: direct DFT, periodic Hann, centered reflected frames.
double reference_loss(const std::vector<double>& x, const std::vector<double>& y) {
  auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t len) {
    const std::ptrdiff_t period = 2 * (len - 1);
    i = ((i % period) + period) % period;
    return i >= len ? period - i : i;
  };
  auto spectrogram = [&](const std::vector<double>& s, std::size_t n) {
    const std::size_t hop = n / 4, frames = (s.size() + hop - 1) / hop, bins = n / 2 + 1;
    std::vector<double> out;
    std::vector<std::complex<double>> twiddle(n);
    for (std::size_t m = 0; m < n; ++m) twiddle[m] = std::polar(1.0, -2.0 * kPi * double(m) / double(n));
    for (std::size_t t = 0; t < frames; ++t) {
      std::vector<double> frame(n);
      for (std::size_t j = 0; j < n; ++j) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * double(j) / double(n));
        frame[j] = w * s[reflect(std::ptrdiff_t(t * hop + j) - std::ptrdiff_t(n / 2), std::ptrdiff_t(s.size()))];
      }
      for (std::size_t k = 0; k < bins; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += frame[j] * twiddle[(k * j) % n];
        out.push_back(std::abs(acc));
      }
    }
    return out;
  };
  double total = 0.0;
  for (std::size_t n : {2048, 1024, 512, 256, 128, 64}) {
    const auto a = spectrogram(x, n), b = spectrogram(y, n);
    double lin = 0.0, lg = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      lin += std::abs(a[i] - b[i]);
      lg += std::abs(std::log(a[i] + 1e-7) - std::log(b[i] + 1e-7));
    }
    total += (lin + lg) / double(a.size());
  }
  return total;
}

}  // namespace

// ---------------------------------------------------------------------------
// Harmonic synth

TEST(HarmonicSynth, ZeroAmplitudeIsSilent) {
  const auto c = constant_controls(kFramesPerSecond, 220.0, 0.0, std::vector<double>(10, 0.1), 4, 0.0);
  const auto y = harmonic_synth(c);
  ASSERT_EQ(y.size(), 16000u);
  for (double v : y.samples) EXPECT_EQ(v, 0.0);
}

TEST(HarmonicSynth, UnitSineAt440) {
  const auto y = harmonic_synth(constant_controls(kFramesPerSecond, 440.0, 1.0, one_hot(0, 60), 65, 0.0));
  ASSERT_EQ(y.size(), 16000u);
  double worst = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n)
    worst = std::max(worst, std::abs(y.samples[n] - std::sin(2.0 * kPi * 440.0 * double(n) / 16000.0)));
  EXPECT_LT(worst, 1e-4);
  const auto spec = stft(y, 2048, 512);
  const std::size_t mid = spec.num_frames / 2;
  std::size_t best = 0;
  for (std::size_t k = 1; k < spec.num_bins(); ++k)
    if (spec.at(mid, k) > spec.at(mid, best)) best = k;
  EXPECT_EQ(best, 56u);
}

TEST(HarmonicSynth, NyquistMaskingKeepsFundamentalOnly) {
  const auto y = harmonic_synth(constant_controls(kFramesPerSecond, 5000.0, 1.0, std::vector<double>(60, 1.0 / 60), 65, 0.0));
  // With only k = 1 surviving and c_1 renormalized to 1, the output is a unit 5 kHz sine.
  double worst = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n)
    worst = std::max(worst, std::abs(y.samples[n] - std::sin(2.0 * kPi * 5000.0 * double(n) / 16000.0)));
  EXPECT_LT(worst, 1e-4);
  const auto p = welch(y, 1024);
  const std::size_t peak = std::size_t(std::max_element(p.begin(), p.end()) - p.begin());
  EXPECT_EQ(peak, 320u);  // 5000 Hz / 15.625 Hz per bin
  double off_peak = 0.0, total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    total += p[k];
    if (k + 3 < peak || k > peak + 3) off_peak += p[k];
  }
  EXPECT_LT(off_peak / total, 1e-6);
}

TEST(HarmonicSynth, MaskedDistributionRowsSumToOne) {
  ad::Tape<double> tape;
  const std::size_t frames = 40, k = 60;
  auto dist = tape.constant(random_tensor({frames, k}, 3, 0.0, 1.0));
  std::vector<double> f0(frames);
  for (std::size_t t = 0; t < frames; ++t) f0[t] = 60.0 + 150.0 * double(t);
  const auto c = mask_and_normalize(dist, f0, 16000.0).value();
  for (std::size_t t = 0; t < frames; ++t) {
    double row = 0.0;
    for (std::size_t h = 0; h < k; ++h) {
      row += c.at(t, h);
      if (double(h + 1) * f0[t] >= 8000.0) EXPECT_EQ(c.at(t, h), 0.0);
    }
    EXPECT_NEAR(row, 1.0, 1e-6);
  }
}

TEST(HarmonicSynth, GainEquivariance) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SynthControls c = constant_controls(100, 0.0, 0.0, std::vector<double>(12, 0.0), 4, 0.0);
  for (std::size_t t = 0; t < 100; ++t) {
    c.f0_hz.at(t) = 100.0 + 300.0 * u(rng);
    c.amplitude.at(t) = u(rng);
    for (std::size_t h = 0; h < 12; ++h) c.harm_distribution.at(t, h) = u(rng);
  }
  const auto base = harmonic_synth(c);
  for (double g : {0.5, 2.0, 4.0}) {
    auto scaled = c;
    for (double& a : scaled.amplitude.data) a *= g;
    const auto y = harmonic_synth(scaled);
    for (std::size_t n = 0; n < y.size(); ++n) ASSERT_EQ(y.samples[n], g * base.samples[n]) << "g " << g << " n " << n;
  }
}

TEST(HarmonicSynth, FrameCountMismatchRejected) {
  auto c = constant_controls(10, 220.0, 1.0, one_hot(0, 4), 4, 0.0);
  c.amplitude.data.pop_back();
  EXPECT_THROW(harmonic_synth(c), ShapeError);
}

TEST(HarmonicSynth, NoEnergyAboveNyquistForRandomControls) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = nyquist_trial(rng);
    EXPECT_LT(r.relative_db, -60.0) << "f0 " << r.f0;
  }
}

TEST(HarmonicSynth, UnmaskedPartialWouldBeDetected) {
  // Sanity check of the measurement: a partial placed inside the top band
  // (below Nyquist, so legal) registers far above the threshold.
  SynthControls c;
  const double f0 = 7995.0;
  c.f0_hz = FrameSeries(std::vector<double>(80, f0), 1, kFrameRate);
  c.amplitude = FrameSeries(std::vector<double>(80, 1.0), 1, kFrameRate);
  c.harm_distribution = FrameSeries(std::vector<double>(80, 1.0), 1, kFrameRate);
  c.noise_magnitudes = FrameSeries(80, 2, kFrameRate);
  const auto y = harmonic_synth(c);
  const auto w = blackman_harris(kNyquistSegment);
  std::vector<double> seg(kNyquistSegment);
  for (std::size_t i = 0; i < kNyquistSegment; ++i) seg[i] = y.samples[512 + i] * w[i];
  const auto spec = rfft<double>(seg, kNyquistSegment);
  double top = 0.0, total = 0.0;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    total += std::norm(spec[k]);
    if (k * 16000.0 / kNyquistSegment >= nyquist_cutoff(16000.0)) top += std::norm(spec[k]);
  }
  EXPECT_GT(10.0 * std::log10(top / total), -10.0);
}

// ---------------------------------------------------------------------------
// Filtered noise

TEST(FilteredNoise, ZeroMagnitudesAreSilent) {
  const auto y = filtered_noise(FrameSeries(250, 65, kFrameRate), kSampleRate, 1);
  ASSERT_EQ(y.size(), 16000u);
  for (double v : y.samples) EXPECT_EQ(v, 0.0);
}

TEST(FilteredNoise, NegativeMagnitudeRejected) {
  FrameSeries h(10, 65, kFrameRate);
  h.at(3, 7) = -0.1;
  EXPECT_THROW(filtered_noise(h, kSampleRate, 1), Error);
}

TEST(FilteredNoise, SeedDeterminesOutput) {
  FrameSeries h(50, 65, kFrameRate);
  for (double& v : h.data) v = 1.0;
  EXPECT_EQ(filtered_noise(h, kSampleRate, 3).samples, filtered_noise(h, kSampleRate, 3).samples);
  EXPECT_NE(filtered_noise(h, kSampleRate, 3).samples, filtered_noise(h, kSampleRate, 4).samples);
}

TEST(FilteredNoise, FlatMagnitudesGiveFlatSpectrum) {
  FrameSeries h(2500, 65, kFrameRate);
  for (double& v : h.data) v = 1.0;
  const auto p = welch(filtered_noise(h, kSampleRate, 11), 512);
  double mean = 0.0;
  std::size_t count = 0;
  const double bin_hz = 16000.0 / 512.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (k * bin_hz >= 100.0 && k * bin_hz <= 7000.0) mean += p[k], ++count;
  mean /= double(count);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (k * bin_hz < 100.0 || k * bin_hz > 7000.0) continue;
    EXPECT_LT(std::abs(10.0 * std::log10(p[k] / mean)), 3.0) << "bin " << k;
  }
}

TEST(FilteredNoise, BrickWallLowHalf) {
  // Bins 0..32 pass (0-4 kHz); the stop band is measured beyond a 250 Hz guard
  // band that absorbs the window's transition.
  FrameSeries h(2500, 65, kFrameRate);
  for (std::size_t t = 0; t < 2500; ++t)
    for (std::size_t b = 0; b <= 32; ++b) h.at(t, b) = 1.0;
  const auto p = welch(filtered_noise(h, kSampleRate, 12), 512);
  const double bin_hz = 16000.0 / 512.0;
  double pass = 0.0, stop = 0.0;
  std::size_t np = 0, ns = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double f = k * bin_hz;
    if (f >= 100.0 && f <= 4000.0 - 250.0) pass += p[k], ++np;
    if (f >= 4000.0 + 250.0) stop += p[k], ++ns;
  }
  EXPECT_LT(10.0 * std::log10((stop / double(ns)) / (pass / double(np))), -40.0);
}

TEST(FilteredNoise, InterpolatesFewerBands) {
  FrameSeries h(100, 2, kFrameRate);
  for (double& v : h.data) v = 0.5;
  FrameSeries full(100, 65, kFrameRate);
  for (double& v : full.data) v = 0.5;
  const auto a = filtered_noise(h, kSampleRate, 9), b = filtered_noise(full, kSampleRate, 9);
  for (std::size_t n = 0; n < a.size(); ++n) EXPECT_NEAR(a.samples[n], b.samples[n], 1e-12);
}

// ---------------------------------------------------------------------------
// Reverb

TEST(Reverb, ZeroImpulseResponseIsIdentity) {
  const auto dry = sine(330.0, 0.5);
  EXPECT_EQ(apply_reverb(dry, ReverbParams{}).samples, dry.samples);
}

TEST(Reverb, TapZeroIsExcluded) {
  const auto dry = sine(330.0, 0.5);
  ReverbParams p;
  p.impulse_response[0] = 5.0;
  EXPECT_EQ(apply_reverb(dry, p).samples, dry.samples);
}

TEST(Reverb, SingleTapDelays) {
  const auto dry = AudioBuffer(random_tensor({8000}, 6).values, kSampleRate);
  ReverbParams p;
  p.impulse_response[1600] = 1.0;
  const auto y = apply_reverb(dry, p);
  ASSERT_EQ(y.size(), dry.size());
  for (std::size_t n = 0; n < y.size(); ++n) {
    const double expect = dry.samples[n] + (n >= 1600 ? dry.samples[n - 1600] : 0.0);
    ASSERT_NEAR(y.samples[n], expect, 1e-12) << n;
  }
}

TEST(Reverb, MatchesNaiveConvolution) {
  const auto dry = AudioBuffer(random_tensor({3000}, 7).values, kSampleRate);
  ReverbParams p;
  p.impulse_response = random_tensor({kReverbLength}, 8, -0.01, 0.01).values;
  const auto y = apply_reverb(dry, p);
  for (std::size_t n = 0; n < dry.size(); ++n) {
    double acc = dry.samples[n];
    for (std::size_t m = 1; m <= n; ++m) acc += dry.samples[n - m] * p.impulse_response[m];
    EXPECT_NEAR(y.samples[n], acc, 1e-5);
  }
}

// ---------------------------------------------------------------------------
// Loss

TEST(SpectralLoss, IdenticalSignalsGiveZero) {
  const auto x = synthetic_voice(0.5);
  const auto r = multiscale_spectral_loss(x, x);
  EXPECT_EQ(r.total, 0.0);
  ASSERT_EQ(r.per_fft.size(), 6u);
  for (const auto& [n, v] : r.per_fft) EXPECT_EQ(v, 0.0);
}

TEST(SpectralLoss, SineAgainstSilenceMatchesStandaloneComputation) {
  const auto x = sine(440.0, 0.25), s = silence(0.25);
  const auto r = multiscale_spectral_loss(x, s);
  EXPECT_GT(r.total, 0.0);
  EXPECT_NEAR(r.total, reference_loss(x.samples, s.samples), 1e-9 * r.total);
  double sum = 0.0;
  for (const auto& [n, v] : r.per_fft) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_DOUBLE_EQ(sum, r.total);
}

TEST(SpectralLoss, RandomPairMatchesStandaloneComputation) {
  const auto a = random_tensor({2000}, 9).values, b = random_tensor({2000}, 10).values;
  const auto r = multiscale_spectral_loss(AudioBuffer(a, kSampleRate), AudioBuffer(b, kSampleRate));
  EXPECT_NEAR(r.total, reference_loss(a, b), 1e-9 * r.total);
}

TEST(SpectralLoss, Symmetric) {
  const auto a = synthetic_voice(0.3, 1), b = sine(200.0, 0.3);
  EXPECT_EQ(multiscale_spectral_loss(a, b).total, multiscale_spectral_loss(b, a).total);
}

TEST(SpectralLoss, LengthMismatchRejected) {
  EXPECT_THROW(multiscale_spectral_loss(sine(440.0, 0.25), sine(440.0, 0.3)), ShapeError);
}

TEST(SpectralLoss, GradientMatchesFiniteDifferences) {
  const auto target = random_tensor({4000}, 11);
  ad::GraphBuilder<double> build = [&](ad::Tape<double>& tape, const std::map<std::string, ad::Var<double>>& p) {
    return spectral_loss(tape.constant(target), p.at("x")).total;
  };
  ad::GradCheckOptions opts;
  opts.coords_per_param = 32;
  const auto report = ad::grad_check<double>(build, {{"x", random_tensor({4000}, 12)}}, opts);
  EXPECT_GT(report.at("x").checked, 20u);
  EXPECT_LT(ad::max_error(report), 1e-5);
}

// ---------------------------------------------------------------------------
// Render

TEST(Render, ZeroControlsAreSilent) {
  const auto c = constant_controls(250, 300.0, 0.0, std::vector<double>(60, 0.0), 65, 0.0);
  ReverbParams p;
  p.impulse_response = random_tensor({kReverbLength}, 13).values;
  for (double v : render(c, p, 1).samples) EXPECT_EQ(v, 0.0);
}

TEST(Render, HarmonicOnlyEqualsHarmonicSynth) {
  const auto c = constant_controls(250, 300.0, 0.7, std::vector<double>(60, 1.0), 65, 0.0);
  EXPECT_EQ(render(c, std::nullopt, 1).samples, harmonic_synth(c).samples);
}

TEST(Render, NoiseOnlyEqualsFilteredNoise) {
  const auto c = constant_controls(250, 300.0, 0.0, std::vector<double>(60, 1.0), 65, 0.3);
  EXPECT_EQ(render(c, std::nullopt, 21).samples, filtered_noise(c.noise_magnitudes, kSampleRate, 21).samples);
}

TEST(Render, DefaultDimensionality) {
  const auto c = constant_controls(kFramesPerSecond, 300.0, 0.5, std::vector<double>(kDefaultHarmonics, 1.0),
                                   kDefaultNoiseBands, 0.1);
  EXPECT_EQ(c.control_dimensions(), 31500u);
  EXPECT_EQ(render(c, ReverbParams{}, 1).size(), 16000u);
}
