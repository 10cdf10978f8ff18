#pragma once

// Dataset ingestion (chunking + feature extraction) and the training loop:
// Adam, exponential learning-rate decay, global-norm clipping, loss logging,
// atomic checkpoints and exact resume.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "smsd/checkpoint.hpp"
#include "smsd/config.hpp"
#include "smsd/features.hpp"
#include "smsd/model.hpp"
#include "smsd/synth.hpp"

namespace smsd {

inline constexpr double kChunkHopSeconds = 1.0;
inline constexpr std::size_t kCheckpointEvery = 1000;
inline constexpr std::size_t kLogEvery = 10;
inline constexpr double kSmoothingWeight = 0.9;

struct Example {
  AudioBuffer audio;
  ConditioningFeatures features;
  std::string source;  // "<file>@<start sample>"
};

struct Dataset {
  std::vector<Example> examples;
  DatasetStats stats;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& wav) {
  auto p = wav;
  p.replace_extension(".features.txt");
  return p;
}

inline std::filesystem::path mfcc_path(const std::filesystem::path& wav) {
  auto p = wav;
  p.replace_extension(".mfcc.txt");
  return p;
}

/// Chunk length in samples: example_seconds at 16 kHz, rounded down to whole frames.
inline std::size_t chunk_samples(double example_seconds) {
  const auto hop = static_cast<std::size_t>(kSampleRate / kFrameRate);
  const auto n = static_cast<std::size_t>(std::floor(example_seconds * kSampleRate + 1e-9));
  const std::size_t out = n / hop * hop;
  if (out == 0) throw Error("example_seconds is shorter than one frame");
  return out;
}

/// Number of chunks a file of `len` samples yields (0 when shorter than one chunk).
inline std::size_t chunk_count(std::size_t len, std::size_t chunk, std::size_t hop) {
  return len < chunk ? 0 : (len - chunk) / hop + 1;
}

/// `*.wav` files of `dir` in lexicographic order.
inline std::vector<std::filesystem::path> list_audio_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

namespace detail {

inline FrameSeries frame_slice(const FrameSeries& s, std::size_t begin, std::size_t count) {
  if (begin + count > s.frames()) throw Error("sidecar covers fewer frames than its audio");
  const auto b = s.data.begin() + static_cast<std::ptrdiff_t>(begin * s.dim);
  return FrameSeries(std::vector<double>(b, b + static_cast<std::ptrdiff_t>(count * s.dim)), s.dim, s.frame_rate);
}

}  // namespace detail

/// Every readable WAV in `dir` is resampled to 16 kHz mono and cut into
/// example_seconds chunks at a 1 s hop. Sidecar feature files (written by
/// `prepare`) replace pitch tracking and loudness extraction when present.
inline Dataset make_dataset(const std::filesystem::path& dir, double example_seconds, bool with_mfcc,
                            std::ostream* warn = &std::cerr) {
  const auto files = list_audio_files(dir);
  const std::size_t chunk = chunk_samples(example_seconds);
  const auto hop = static_cast<std::size_t>(kChunkHopSeconds * kSampleRate);
  const std::size_t frame_hop = static_cast<std::size_t>(kSampleRate / kFrameRate);
  Dataset ds;
  std::size_t decoded = 0;
  for (const auto& file : files) {
    AudioBuffer audio;
    try {
      audio = load_audio(file);
    } catch (const Error& e) {
      if (warn) *warn << "warning: skipping " << file.string() << ": " << e.what() << "\n";
      continue;
    }
    ++decoded;
    const std::size_t n = chunk_count(audio.size(), chunk, hop);
    if (n == 0) {
      if (warn)
        *warn << "warning: dropping " << file.string() << ": " << audio.seconds() << " s is shorter than "
              << example_seconds << " s\n";
      continue;
    }
    std::optional<SidecarFrames> sidecar;
    if (std::filesystem::exists(sidecar_path(file))) sidecar = read_sidecar(sidecar_path(file));
    std::optional<FrameSeries> mfcc_file;
    if (with_mfcc && std::filesystem::exists(mfcc_path(file))) mfcc_file = read_mfcc_file(mfcc_path(file));
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t start = c * hop;
      const auto b = audio.samples.begin() + static_cast<std::ptrdiff_t>(start);
      AudioBuffer piece(std::vector<double>(b, b + static_cast<std::ptrdiff_t>(chunk)), kSampleRate);
      std::optional<SidecarFrames> sc;
      const std::size_t frames = chunk / frame_hop;
      if (sidecar) {
        const std::size_t f0 = start / frame_hop;
        sc = SidecarFrames{detail::frame_slice(sidecar->f0_hz, f0, frames), detail::frame_slice(sidecar->confidence, f0, frames),
                           detail::frame_slice(sidecar->loudness_db, f0, frames)};
      }
      auto features = extract_features(piece, with_mfcc && !mfcc_file, sc);
      if (mfcc_file) {
        const std::size_t per_chunk = mfcc(piece).frames();
        features.mfcc = detail::frame_slice(*mfcc_file, start / (2 * frame_hop), per_chunk);
      }
      ds.examples.push_back({std::move(piece), std::move(features), file.filename().string() + "@" + std::to_string(start)});
    }
  }
  if (decoded == 0) throw IoError("no decodable audio in " + dir.string());
  if (ds.examples.empty()) throw IoError("no audio in " + dir.string() + " is at least " + std::to_string(example_seconds) + " s long");
  std::vector<ConditioningFeatures> all;
  all.reserve(ds.examples.size());
  for (const auto& e : ds.examples) all.push_back(e.features);
  try {
    ds.stats = compute_dataset_stats(all);
  } catch (const Error& e) {
    if (warn) *warn << "warning: " << e.what() << "; pitch statistics left at 0\n";
    ds.stats = {};
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Loss graph

/// decode -> render -> multi-scale spectral loss for one example. The render
/// (whole frames) is cut to the example length.
template <class T>
LossTerms<T> example_loss(ad::Tape<T>& tape, const Example& ex, const VarMap<T>& p, const ModelConfig& cfg,
                          std::uint64_t noise_seed) {
  auto out = decode(tape, ex.features, p, cfg);
  std::optional<ad::Var<T>> ir;
  if (cfg.use_reverb) ir = param(p, "reverb/ir");
  auto audio = render_graph(out.amplitude, out.distribution, out.noise, ex.features.f0_hz.data, ir, noise_seed);
  if (audio.size() < ex.audio.size())
    throw ShapeError("example_loss: render has " + std::to_string(audio.size()) + " samples, target " +
                     std::to_string(ex.audio.size()));
  if (audio.size() != ex.audio.size()) audio = ad::head(audio, ex.audio.size());
  return spectral_loss(tape.constant(to_tensor<T>(ex.audio)), audio);
}

/// Renders an example through the model in double precision.
inline AudioBuffer render_example(const ConditioningFeatures& f, const ad::TensorMap<float>& params,
                                  const ModelConfig& cfg, std::uint64_t seed) {
  const auto controls = decode_controls(f, params, cfg);
  std::optional<ReverbParams> reverb;
  if (cfg.use_reverb) {
    const auto& ir = params.at("reverb/ir").values;
    reverb = ReverbParams{std::vector<double>(ir.begin(), ir.end())};
  }
  return render(controls, reverb, seed);
}

// ---------------------------------------------------------------------------
// Training

struct LossLogEntry {
  std::size_t step = 0;
  double total = 0.0;
  std::array<double, kLossFftSizes.size()> per_fft{};  // in kLossFftSizes order

  bool operator==(const LossLogEntry&) const = default;
};

inline std::string loss_csv_header() { return "step,total,L2048,L1024,L512,L256,L128,L64"; }

inline std::string loss_csv_row(const LossLogEntry& e) {
  std::string s = std::to_string(e.step) + "," + format_number(e.total);
  for (double v : e.per_fft) s += "," + format_number(v);
  return s;
}

inline std::vector<LossLogEntry> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != loss_csv_header()) throw IoError(path.string() + ": missing loss CSV header");
  std::vector<LossLogEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 2 + kLossFftSizes.size())
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 8 columns");
    LossLogEntry e;
    try {
      e.step = std::stoul(cells[0]);
      e.total = std::stod(cells[1]);
      for (std::size_t i = 0; i < e.per_fft.size(); ++i) e.per_fft[i] = std::stod(cells[2 + i]);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    out.push_back(e);
  }
  return out;
}

/// Debiased exponential moving average; the first output equals the first input.
inline std::vector<double> smooth_losses(const std::vector<double>& values, double weight = kSmoothingWeight) {
  if (!(weight >= 0.0 && weight < 1.0)) throw Error("smoothing weight must be in [0, 1)");
  std::vector<double> out;
  out.reserve(values.size());
  double acc = 0.0, norm = 0.0;
  for (double v : values) {
    acc = weight * acc + (1.0 - weight) * v;
    norm = weight * norm + (1.0 - weight);
    out.push_back(acc / norm);
  }
  return out;
}

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoint.smsd + loss.csv
  std::optional<Checkpoint> resume;
  std::ostream* progress = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossLogEntry> log;
};

/// Batch-mean loss and gradient of one step.
struct StepResult {
  LossLogEntry loss;
  ad::TensorMap<float> grads;
};

/// Batch indices and noise seeds are a pure function of (seed, step), which
/// makes resumed runs follow the uninterrupted trajectory exactly.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::size_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(std::uint64_t(step) >> 32)};
  return std::mt19937_64(seq);
}

inline StepResult compute_step(const ad::TensorMap<float>& params, const Dataset& ds, const TrainConfig& cfg,
                               std::size_t step) {
  auto rng = step_rng(cfg.seed, step);
  std::uniform_int_distribution<std::size_t> pick(0, ds.examples.size() - 1);
  StepResult r;
  r.loss.step = step;
  for (const auto& [name, t] : params) r.grads.emplace(name, ad::Tensor<float>(t.shape));
  const float inv_b = 1.0f / static_cast<float>(cfg.batch_size);
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const auto& ex = ds.examples[pick(rng)];
    const std::uint64_t noise_seed = rng();
    ad::Tape<float> tape;
    const auto vars = ad::bind_parameters(tape, params);
    auto terms = example_loss(tape, ex, vars, cfg.model, noise_seed);
    for (std::size_t i = 0; i < kLossFftSizes.size(); ++i)
      r.loss.per_fft[i] += static_cast<double>(terms.per_fft.at(kLossFftSizes[i]).value()[0]) / double(cfg.batch_size);
    const auto g = tape.backward(terms.total);
    for (auto& [name, acc] : r.grads) {
      const auto& gv = g.at(name).values;
      for (std::size_t i = 0; i < gv.size(); ++i) acc.values[i] += gv[i] * inv_b;
    }
  }
  r.loss.total = 0.0;
  for (double v : r.loss.per_fft) r.loss.total += v;
  return r;
}

inline double global_norm(const ad::TensorMap<float>& grads) {
  double sq = 0.0;
  for (const auto& [name, t] : grads)
    for (float v : t.values) sq += double(v) * double(v);
  return std::sqrt(sq);
}

inline double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
  return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(step - 1) / 1000.0);
}

/// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8) with bias correction.
inline void adam_update(Checkpoint& c, const ad::TensorMap<float>& grads, double lr, std::size_t t) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, double(t)), c2 = 1.0 - std::pow(b2, double(t));
  for (auto& [name, p] : c.params) {
    const auto& g = grads.at(name).values;
    auto& m = c.adam_m.at(name).values;
    auto& v = c.adam_v.at(name).values;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * double(g[i]) * g[i]);
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      p.values[i] = static_cast<float>(p.values[i] - update);
    }
  }
}

inline bool is_log_step(std::size_t step, std::size_t last) { return step == 1 || step % kLogEvery == 0 || step == last; }

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, const TrainOptions& opts = {}) {
  cfg.validate();
  if (ds.examples.empty()) throw Error("train: empty dataset");
  if (cfg.model.use_z)
    for (const auto& e : ds.examples)
      if (!e.features.mfcc) throw Error("train: model uses z but example " + e.source + " has no MFCC");

  TrainResult result;
  Checkpoint& c = result.checkpoint;
  if (opts.resume) {
    c = *opts.resume;
    check_compatible(c.params, cfg.model);
    if (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size())
      throw Error("train: resume checkpoint lacks optimizer state");
  } else {
    c.params = init_params<float>(cfg.model, cfg.seed);
    for (const auto& [name, t] : c.params) {
      c.adam_m.emplace(name, ad::Tensor<float>(t.shape));
      c.adam_v.emplace(name, ad::Tensor<float>(t.shape));
    }
    c.step = 0;
  }
  c.config = cfg;
  c.stats = ds.stats;

  std::optional<std::ofstream> csv;
  std::filesystem::path ckpt_path;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    ckpt_path = *opts.out_dir / "checkpoint.smsd";
    const auto csv_path = *opts.out_dir / "loss.csv";
    const bool append = opts.resume && std::filesystem::exists(csv_path);
    csv.emplace(csv_path, append ? std::ios::app : std::ios::trunc);
    if (!*csv) throw IoError("cannot write " + csv_path.string());
    if (!append) *csv << loss_csv_header() << "\n";
  }

  std::optional<std::size_t> last_saved;
  if (opts.resume && opts.out_dir && std::filesystem::exists(ckpt_path)) last_saved = c.step;
  for (std::size_t step = c.step + 1; step <= cfg.steps; ++step) {
    auto r = compute_step(c.params, ds, cfg, step);
    const double norm = global_norm(r.grads);
    if (!std::isfinite(r.loss.total) || !std::isfinite(norm)) {
      std::string where;
      if (last_saved)
        where = " (last good checkpoint: " + ckpt_path.string() + ", step " + std::to_string(*last_saved) + ")";
      else if (opts.out_dir)
        where = " (no checkpoint written yet)";
      throw TrainingDiverged("non-finite loss or gradient at step " + std::to_string(step) + where);
    }
    if (norm > cfg.clip_norm) {
      const float s = static_cast<float>(cfg.clip_norm / norm);
      for (auto& [name, g] : r.grads)
        for (float& v : g.values) v *= s;
    }
    adam_update(c, r.grads, learning_rate_at(cfg, step), step);
    c.step = step;

    if (is_log_step(step, cfg.steps)) {
      result.log.push_back(r.loss);
      if (csv) *csv << loss_csv_row(r.loss) << "\n" << std::flush;
      if (opts.progress) *opts.progress << "step " << step << " loss " << r.loss.total << "\n" << std::flush;
    }
    if (opts.out_dir && (step % kCheckpointEvery == 0 || step == cfg.steps)) {
      save_checkpoint(c, ckpt_path);
      last_saved = step;
    }
  }
  return result;
}

}  // namespace smsd
