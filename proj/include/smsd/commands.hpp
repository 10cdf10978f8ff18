#pragma once

// Workflows behind the `smsd` command line: dataset preparation, transfer
// rendering, full-graph gradient checks and figure files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "smsd/ad/grad_check.hpp"
#include "smsd/checkpoint.hpp"
#include "smsd/config.hpp"
#include "smsd/trainer.hpp"

namespace smsd {

// ---------------------------------------------------------------------------
// prepare

inline std::string stats_text(const DatasetStats& s) {
  return "mean_midi_pitch = " + format_number(s.mean_midi_pitch) + "\n" +
         "mean_loudness_db = " + format_number(s.mean_loudness_db) + "\n" +
         "std_loudness_db = " + format_number(s.std_loudness_db) + "\n";
}

/// Chunk file name for an example source "<file>@<start>".
inline std::string chunk_name(const std::string& source) {
  const auto at = source.rfind('@');
  const auto stem = std::filesystem::path(source.substr(0, at)).stem().string();
  char start[16];
  std::snprintf(start, sizeof start, "%09llu", std::stoull(source.substr(at + 1)));
  return stem + "_" + start + ".wav";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

/// Cuts every WAV in `input` into examples and writes one WAV, one feature
/// sidecar (and one MFCC file) per chunk plus `stats.txt`. Returns the chunk count.
inline std::size_t prepare_dataset(const std::filesystem::path& input, const std::filesystem::path& output,
                                   double example_seconds, bool with_mfcc, std::ostream* warn = &std::cerr) {
  std::error_code ec;
  if (std::filesystem::exists(output) && std::filesystem::equivalent(input, output, ec))
    throw Error("prepare: output directory must differ from the input directory");
  const auto ds = make_dataset(input, example_seconds, with_mfcc, warn);
  std::filesystem::create_directories(output);
  for (const auto& ex : ds.examples) {
    const auto wav = output / chunk_name(ex.source);
    write_wav(wav, ex.audio);
    write_sidecar(sidecar_path(wav), ex.features);
    if (ex.features.mfcc) write_mfcc_file(mfcc_path(wav), *ex.features.mfcc);
  }
  write_text(output / "stats.txt", stats_text(ds.stats));
  return ds.examples.size();
}

// ---------------------------------------------------------------------------
// run

struct TransferResult {
  AudioBuffer audio;
  ConditioningFeatures features;  // after preconditioning
};

inline TransferResult transfer(const Checkpoint& c, const AudioBuffer& input, const PreconditionOptions& opts,
                               std::uint64_t seed) {
  check_compatible(c.params, c.config.model);
  const auto audio = input.sample_rate == kSampleRate ? input : resample(input, kSampleRate);
  auto f = extract_features(audio, c.config.model.use_z);
  f = precondition(std::move(f), opts, c.stats);
  auto out = render_example(f, c.params, c.config.model, seed);
  return {std::move(out), std::move(f)};
}

inline std::string features_csv(const ConditioningFeatures& f) {
  std::string s = "frame,f0_hz,loudness_db\n";
  for (std::size_t t = 0; t < f.frames(); ++t)
    s += std::to_string(t) + "," + format_number(f.f0_hz.at(t)) + "," + format_number(f.loudness_db.at(t)) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// grad-check

/// Step for the full-graph check. The long-double oracle keeps rounding far
/// below the truncation error of near-silent log-magnitude bins at this step.
inline constexpr double kFullGraphEps = 1e-6;

/// Checks the tape gradient (precision T) of decode -> render -> loss for every
/// parameter tensor of `cfg` against central differences evaluated in U.
template <class T = double, class U = long double>
ad::GradCheckReport full_graph_grad_check(const ModelConfig& cfg, const Example& ex, std::uint64_t param_seed,
                                          const ad::GradCheckOptions& opts) {
  auto params = init_params<T>(cfg, param_seed);
  if (cfg.use_reverb) {
    // A zero impulse response would leave its own gradient trivially exact.
    std::mt19937_64 rng(param_seed + 1);
    std::normal_distribution<double> n(0.0, 1e-3);
    for (T& v : params.at("reverb/ir").values) v = static_cast<T>(n(rng));
  }
  const std::uint64_t noise_seed = param_seed + 2;
  ad::GraphBuilder<T> build = [&](ad::Tape<T>& tape, const VarMap<T>& vars) {
    return example_loss(tape, ex, vars, cfg, noise_seed).total;
  };
  ad::GraphBuilder<U> oracle = [&](ad::Tape<U>& tape, const VarMap<U>& vars) {
    return example_loss(tape, ex, vars, cfg, noise_seed).total;
  };
  return ad::grad_check(build, oracle, params, opts);
}

// ---------------------------------------------------------------------------
// figures

inline constexpr std::size_t kFigureFft = 2048;
inline constexpr std::size_t kFigureHop = 512;
inline constexpr double kFigureRangeDb = 100.0;

/// Log-magnitude spectrogram as a binary PGM: one column per frame, one row
/// per bin with the highest frequency on top. 0 dB is a full-scale sine
/// (Hann peak |X| = N/4); black is -100 dB or below.
inline std::string spectrogram_pgm(const AudioBuffer& audio) {
  const auto s = stft(audio, kFigureFft, kFigureHop);
  const std::size_t w = s.num_frames, h = s.num_bins();
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const double ref = static_cast<double>(kFigureFft) / 4.0;
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t bin = h - 1 - r;
    for (std::size_t t = 0; t < w; ++t) {
      const double db = 20.0 * std::log10(std::max(s.at(t, bin) / ref, 1e-300));
      const double u = std::clamp((db + kFigureRangeDb) / kFigureRangeDb, 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * u))));
    }
  }
  return out;
}

struct Pgm {
  std::size_t width = 0, height = 0;
  std::vector<unsigned char> pixels;
  unsigned char at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

inline Pgm parse_pgm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  Pgm p;
  int maxval = 0;
  in >> magic >> p.width >> p.height >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw IoError("not an 8-bit binary PGM");
  in.get();
  p.pixels.resize(p.width * p.height);
  in.read(reinterpret_cast<char*>(p.pixels.data()), static_cast<std::streamsize>(p.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(p.pixels.size())) throw IoError("truncated PGM");
  return p;
}

/// `step,total,smoothed` with the debiased EMA of the totals.
inline std::string loss_curve_csv(const std::vector<LossLogEntry>& log) {
  std::vector<double> totals;
  for (const auto& e : log) totals.push_back(e.total);
  const auto smooth = smooth_losses(totals);
  std::string s = "step,total,smoothed\n";
  for (std::size_t i = 0; i < log.size(); ++i)
    s += std::to_string(log[i].step) + "," + format_number(totals[i]) + "," + format_number(smooth[i]) + "\n";
  return s;
}

}  // namespace smsd
