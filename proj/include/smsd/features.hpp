#pragma once

// Conditioning features (f0, confidence, loudness, MFCC), dataset statistics
// and the transfer-time preconditioning chain.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smsd/audio.hpp"
#include "smsd/error.hpp"
#include "smsd/fft.hpp"
#include "smsd/signal.hpp"

namespace smsd {

inline double hz_to_midi(double hz) { return 69.0 + 12.0 * std::log2(hz / 440.0); }
inline double midi_to_hz(double midi) { return 440.0 * std::exp2((midi - 69.0) / 12.0); }

struct ConditioningFeatures {
  FrameSeries f0_hz;
  FrameSeries f0_confidence;
  FrameSeries loudness_db;
  std::optional<FrameSeries> mfcc;

  std::size_t frames() const { return f0_hz.frames(); }

  void validate() const {
    const std::size_t n = f0_hz.frames();
    if (f0_confidence.frames() != n || loudness_db.frames() != n)
      throw ShapeError("conditioning features: 250 Hz series have different frame counts");
    for (double v : f0_hz.data)
      if (!(v >= 0.0)) throw Error("conditioning features: negative or NaN f0");
    for (double v : f0_confidence.data)
      if (!(v >= 0.0 && v <= 1.0)) throw Error("conditioning features: confidence outside [0, 1]");
  }
  bool operator==(const ConditioningFeatures&) const = default;
};

struct DatasetStats {
  double mean_midi_pitch = 0.0;
  double mean_loudness_db = 0.0;
  double std_loudness_db = 0.0;
  bool operator==(const DatasetStats&) const = default;
};

struct PreconditionOptions {
  bool use_statistics = false;
  double mask_threshold = 0.0;
  double quiet = 0.0;
  double autotune = 0.0;
  int octave_shift = 0;
  double loudness_shift = 0.0;

  /// Transfer defaults: statistics on, threshold 1, quiet 20 dB, autotune 0,
  /// one octave up, loudness -10 dB.
  static PreconditionOptions transfer_defaults() { return {true, 1.0, 20.0, 0.0, 1, -10.0}; }
  /// Leaves features unchanged.
  static PreconditionOptions identity() { return {}; }
};

// ---------------------------------------------------------------------------
// Pitch tracking

struct PitchTrackerSettings {
  static constexpr std::size_t kWindow = 1024;
  static constexpr std::size_t kHop = 64;
  static constexpr double kMinHz = 32.70;
  static constexpr double kMaxHz = 1975.5;
  static constexpr double kAbsoluteThreshold = 0.1;
  /// Frames below this confidence are treated as unvoiced.
  static constexpr double kVoicedConfidence = 0.5;
};

struct PitchTrack {
  FrameSeries f0_hz;
  FrameSeries confidence;
};

/// YIN-style tracker: cumulative-mean-normalized difference function over a
/// 1024-sample centered window, hop 64, lags covering 32.70..1975.5 Hz.
/// confidence = 1 - d'(best lag), clamped to [0,1]. Unvoiced frames take the
/// most recent voiced f0 (or the next voiced one at the start).
inline PitchTrack track_f0(const AudioBuffer& audio) {
  using S = PitchTrackerSettings;
  const std::size_t len = audio.size();
  const std::size_t frames = len == 0 ? 0 : centered_frame_count(len, S::kHop);
  PitchTrack out{FrameSeries(frames, 1, kFrameRate), FrameSeries(frames, 1, kFrameRate)};
  if (frames == 0) return out;

  const double sr = audio.sample_rate;
  const auto tau_min = static_cast<std::size_t>(std::floor(sr / S::kMaxHz));
  const auto tau_max = static_cast<std::size_t>(std::ceil(sr / S::kMinHz));
  if (tau_max + 2 >= S::kWindow) throw Error("track_f0: sample rate too high for the analysis window");
  const std::size_t w = S::kWindow - tau_max;  // integration length
  const std::size_t nfft = next_power_of_two(S::kWindow + w);
  const auto& plan = fft_plan<double>(nfft);

  std::vector<double> x(S::kWindow), diff(tau_max + 1), cmnd(tau_max + 1), energy(S::kWindow + 1);
  std::vector<std::complex<double>> fa(nfft), fb(nfft);
  std::vector<bool> voiced(frames, false);

  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < S::kWindow; ++j) x[j] = audio.samples[frame_source_index(t, j, S::kWindow, S::kHop, len)];
    // Cross term r(tau) = sum_{j<w} x_j x_{j+tau} via FFT correlation.
    std::fill(fa.begin(), fa.end(), std::complex<double>{});
    std::fill(fb.begin(), fb.end(), std::complex<double>{});
    for (std::size_t j = 0; j < S::kWindow; ++j) fa[j] = x[j];
    for (std::size_t j = 0; j < w; ++j) fb[j] = x[j];
    plan.forward(fa);
    plan.forward(fb);
    for (std::size_t k = 0; k < nfft; ++k) fa[k] *= std::conj(fb[k]);
    plan.inverse_unscaled(fa);
    energy[0] = 0.0;
    for (std::size_t j = 0; j < S::kWindow; ++j) energy[j + 1] = energy[j] + x[j] * x[j];
    const double e0 = energy[w];
    for (std::size_t tau = 1; tau <= tau_max; ++tau) {
      const double cross = fa[tau].real() / static_cast<double>(nfft);
      const double e_tau = energy[tau + w] - energy[tau];
      diff[tau] = std::max(0.0, e0 + e_tau - 2.0 * cross);
    }
    cmnd[0] = 1.0;
    double running = 0.0;
    for (std::size_t tau = 1; tau <= tau_max; ++tau) {
      running += diff[tau];
      cmnd[tau] = running > 1e-12 * static_cast<double>(tau) ? diff[tau] * static_cast<double>(tau) / running : 1.0;
    }

    std::size_t best = tau_min;
    bool found = false;
    for (std::size_t tau = tau_min; tau <= tau_max; ++tau) {
      if (cmnd[tau] < S::kAbsoluteThreshold) {
        while (tau + 1 <= tau_max && cmnd[tau + 1] < cmnd[tau]) ++tau;
        best = tau;
        found = true;
        break;
      }
    }
    if (!found)
      for (std::size_t tau = tau_min; tau <= tau_max; ++tau)
        if (cmnd[tau] < cmnd[best]) best = tau;

    double lag = static_cast<double>(best);
    if (best > tau_min && best < tau_max) {
      const double a = cmnd[best - 1], b = cmnd[best], c = cmnd[best + 1];
      const double denom = a - 2.0 * b + c;
      if (denom > 0.0) lag += std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
    }
    const double conf = std::clamp(1.0 - cmnd[best], 0.0, 1.0);
    out.confidence.at(t) = conf;
    out.f0_hz.at(t) = sr / lag;
    voiced[t] = conf >= S::kVoicedConfidence;
  }

  // Hold the last voiced f0 through unvoiced stretches.
  std::optional<double> last;
  for (std::size_t t = 0; t < frames; ++t) {
    if (voiced[t]) last = out.f0_hz.at(t);
    else out.f0_hz.at(t) = last.value_or(-1.0);
  }
  const auto first_voiced = std::find(voiced.begin(), voiced.end(), true);
  const double lead = first_voiced == voiced.end() ? 0.0 : out.f0_hz.at(static_cast<std::size_t>(first_voiced - voiced.begin()));
  for (std::size_t t = 0; t < frames && out.f0_hz.at(t) < 0.0; ++t) out.f0_hz.at(t) = lead;
  return out;
}

// ---------------------------------------------------------------------------
// Sidecar feature files: one line per frame, "time_s f0_hz confidence loudness_db".

struct SidecarFrames {
  FrameSeries f0_hz;
  FrameSeries confidence;
  FrameSeries loudness_db;
};

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline void write_sidecar(const std::filesystem::path& path, const ConditioningFeatures& f) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t t = 0; t < f.frames(); ++t) {
    out << format_number(static_cast<double>(t) / f.f0_hz.frame_rate) << ' ' << format_number(f.f0_hz.at(t)) << ' '
        << format_number(f.f0_confidence.at(t)) << ' ' << format_number(f.loudness_db.at(t)) << '\n';
  }
}

inline SidecarFrames read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> f0, conf, loud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream is(line);
    double time, a, b, c;
    if (!(is >> time >> a >> b >> c)) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 numbers");
    f0.push_back(a);
    conf.push_back(b);
    loud.push_back(c);
  }
  return {FrameSeries(std::move(f0), 1, kFrameRate), FrameSeries(std::move(conf), 1, kFrameRate),
          FrameSeries(std::move(loud), 1, kFrameRate)};
}

/// MFCC side file: one frame per line, 30 space-separated values.
inline void write_mfcc_file(const std::filesystem::path& path, const FrameSeries& mfcc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t t = 0; t < mfcc.frames(); ++t) {
    for (std::size_t d = 0; d < mfcc.dim; ++d) out << (d ? " " : "") << format_number(mfcc.at(t, d));
    out << '\n';
  }
}

inline FrameSeries read_mfcc_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> values;
  std::size_t dim = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::size_t count = 0;
    double v;
    while (is >> v) {
      values.push_back(v);
      ++count;
    }
    if (count == 0) continue;
    if (dim == 0) dim = count;
    if (count != dim) throw IoError(path.string() + ": ragged MFCC rows");
  }
  if (dim == 0) throw IoError(path.string() + ": empty MFCC file");
  return FrameSeries(std::move(values), dim, kMfccFrameRate);
}

// ---------------------------------------------------------------------------

/// Tracker (or sidecar override) + loudness (+ MFCC). The 250 Hz series are
/// truncated to their common frame count.
inline ConditioningFeatures extract_features(const AudioBuffer& audio, bool with_mfcc,
                                             const std::optional<SidecarFrames>& sidecar = std::nullopt) {
  if (audio.empty()) throw Error("extract_features: empty audio");
  ConditioningFeatures f;
  if (sidecar) {
    f.f0_hz = sidecar->f0_hz;
    f.f0_confidence = sidecar->confidence;
    f.loudness_db = sidecar->loudness_db;
  } else {
    auto track = track_f0(audio);
    f.f0_hz = std::move(track.f0_hz);
    f.f0_confidence = std::move(track.confidence);
    f.loudness_db = a_weighted_loudness(audio);
  }
  const std::size_t n = std::min({f.f0_hz.frames(), f.f0_confidence.frames(), f.loudness_db.frames()});
  f.f0_hz.truncate(n);
  f.f0_confidence.truncate(n);
  f.loudness_db.truncate(n);
  if (with_mfcc) f.mfcc = mfcc(audio);
  f.validate();
  return f;
}

inline constexpr double kVoicedStatsConfidence = 0.8;

inline bool is_audible(double loudness_db) { return loudness_db > LoudnessSettings::kFloorDb + 1.0; }

/// Mean MIDI pitch over confident frames; loudness moments over frames above
/// the floor (+1 dB).
inline DatasetStats compute_dataset_stats(const std::vector<ConditioningFeatures>& features) {
  if (features.empty()) throw Error("compute_dataset_stats: empty feature list");
  double pitch_sum = 0.0, loud_sum = 0.0, loud_sq = 0.0;
  std::size_t pitch_n = 0, loud_n = 0;
  for (const auto& f : features) {
    for (std::size_t t = 0; t < f.frames(); ++t) {
      if (f.f0_confidence.at(t) > kVoicedStatsConfidence && f.f0_hz.at(t) > 0.0) {
        pitch_sum += hz_to_midi(f.f0_hz.at(t));
        ++pitch_n;
      }
      const double l = f.loudness_db.at(t);
      if (is_audible(l)) {
        loud_sum += l;
        ++loud_n;
      }
    }
  }
  if (pitch_n == 0) throw Error("compute_dataset_stats: no voiced frames (confidence > 0.8)");
  DatasetStats s;
  s.mean_midi_pitch = pitch_sum / static_cast<double>(pitch_n);
  if (loud_n > 0) {
    s.mean_loudness_db = loud_sum / static_cast<double>(loud_n);
    for (const auto& f : features)
      for (double l : f.loudness_db.data)
        if (is_audible(l)) loud_sq += (l - s.mean_loudness_db) * (l - s.mean_loudness_db);
    s.std_loudness_db = std::sqrt(loud_sq / static_cast<double>(loud_n));
  } else {
    s.mean_loudness_db = LoudnessSettings::kFloorDb;
  }
  return s;
}

/// Mean MIDI pitch over frames with positive f0, unweighted by confidence.
inline double mean_midi_pitch(const FrameSeries& f0) {
  double acc = 0.0;
  std::size_t n = 0;
  for (double v : f0.data)
    if (v > 0.0) {
      acc += hz_to_midi(v);
      ++n;
    }
  if (n == 0) throw Error("mean_midi_pitch: no positive f0 frames");
  return acc / static_cast<double>(n);
}

/// Per-frame masking score: confidence * clamp((loudness_db + 120) / 120, 0, 1).
inline std::vector<double> masking_scores(const ConditioningFeatures& f) {
  std::vector<double> s(f.frames());
  for (std::size_t t = 0; t < s.size(); ++t) {
    const double norm = std::clamp((f.loudness_db.at(t) - LoudnessSettings::kFloorDb) / -LoudnessSettings::kFloorDb, 0.0, 1.0);
    s[t] = f.f0_confidence.at(t) * norm;
  }
  return s;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

/// Preconditioning chain applied in order:
///  1. octave shift      f0 *= 2^octave_shift
///  2. autotune          f0 *= 2^(a * (round(p) - p) / 12), p = MIDI pitch
///  3. statistics        loudness moment-matched to the dataset (src moments
///                       from audible frames of `f`)
///  4. loudness shift    loudness += loudness_shift
///  5. masking           frames whose masking score falls below
///                       mask_threshold * median(score) lose `quiet` dB
/// Frames with f0 <= 0 are left untouched by 1-2.
inline ConditioningFeatures precondition(ConditioningFeatures f, const PreconditionOptions& opts,
                                         const std::optional<DatasetStats>& stats) {
  if (opts.quiet < 0.0) throw Error("precondition: quiet must be >= 0");
  if (opts.autotune < 0.0 || opts.autotune > 1.0) throw Error("precondition: autotune must be in [0, 1]");
  if (opts.use_statistics && !stats) throw Error("precondition: use_statistics requires dataset statistics");

  if (opts.octave_shift != 0)
    for (double& v : f.f0_hz.data)
      if (v > 0.0) v = std::ldexp(v, opts.octave_shift);

  if (opts.autotune != 0.0)
    for (double& v : f.f0_hz.data)
      if (v > 0.0) {
        const double p = hz_to_midi(v);
        v *= std::exp2(opts.autotune * (std::round(p) - p) / 12.0);
      }

  if (opts.use_statistics) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (double l : f.loudness_db.data)
      if (is_audible(l)) {
        sum += l;
        ++n;
      }
    if (n > 0) {
      const double mean = sum / static_cast<double>(n);
      for (double l : f.loudness_db.data)
        if (is_audible(l)) sq += (l - mean) * (l - mean);
      const double sd = std::sqrt(sq / static_cast<double>(n));
      for (double& l : f.loudness_db.data)
        l = (l - mean) / std::max(sd, 1e-3) * stats->std_loudness_db + stats->mean_loudness_db;
    }
  }

  if (opts.loudness_shift != 0.0)
    for (double& l : f.loudness_db.data) l += opts.loudness_shift;

  if (opts.mask_threshold != 0.0 && opts.quiet != 0.0) {
    const auto scores = masking_scores(f);
    const double cut = opts.mask_threshold * median(scores);
    for (std::size_t t = 0; t < scores.size(); ++t)
      if (scores[t] < cut) f.loudness_db.at(t) -= opts.quiet;
  }
  return f;
}

}  // namespace smsd
