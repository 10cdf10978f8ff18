// smsd: prepare / train / run / grad-check / figures.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad usage, config or missing
// input, 3 training diverged.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <numbers>

#include "smsd/smsd.hpp"

namespace fs = std::filesystem;
using namespace smsd;

namespace {

struct UsageError : Error {
  using Error::Error;
};

std::uint64_t seed_override(std::uint64_t seed) {
  const char* env = std::getenv("SMS_SEED");
  if (!env) return seed;
  const std::string s = env;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw UsageError("SMS_SEED must be a non-negative integer, got '" + s + "'");
  return v;
}

/// 220 Hz band-limited sawtooth, used when grad-check gets no input.
AudioBuffer default_clip(std::size_t n) {
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = 2.0 * std::numbers::pi * 220.0 * static_cast<double>(i) / kSampleRate;
    for (int k = 1; k <= 30; ++k) x[i] += 0.2 * std::sin(k * ph) / k;
  }
  return AudioBuffer(std::move(x), kSampleRate);
}

struct PrepareArgs {
  fs::path input, output;
  bool with_mfcc = false;
  double example_seconds = 4.0;
};

struct TrainArgs {
  fs::path config, data, out;
  bool resume = false;
};

struct RunArgs {
  fs::path checkpoint, input, out;
  PreconditionOptions opts = PreconditionOptions::transfer_defaults();
  std::uint64_t seed = 0;
};

struct GradCheckArgs {
  fs::path config, input;
  double seconds = 0.25;
  std::size_t coords = 16;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double eps = kFullGraphEps;
};

struct FiguresArgs {
  fs::path losslog, out;
  std::vector<fs::path> wavs;
};

int cmd_prepare(const PrepareArgs& a) {
  const auto n = prepare_dataset(a.input, a.output, a.example_seconds, a.with_mfcc);
  std::cout << "wrote " << n << " chunks and stats.txt to " << a.output.string() << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  auto cfg = ConfigFile::load(a.config).to_train_config();
  cfg.seed = seed_override(cfg.seed);
  fs::create_directories(a.out);
  const std::string resolved = to_config_text(cfg);
  write_text(a.out / "config.conf", resolved);
  std::cout << resolved << std::flush;

  const auto ds = make_dataset(a.data, cfg.example_seconds, cfg.model.use_z);
  std::cout << ds.examples.size() << " examples, mean MIDI pitch " << ds.stats.mean_midi_pitch << "\n";
  TrainOptions opts;
  opts.out_dir = a.out;
  opts.progress = &std::cout;
  const auto ckpt = a.out / "checkpoint.smsd";
  if (a.resume && fs::exists(ckpt)) {
    opts.resume = load_checkpoint(ckpt, cfg.model);
    std::cout << "resuming from step " << opts.resume->step << "\n";
  }
  const auto r = train(cfg, ds, opts);
  std::cout << "checkpoint " << ckpt.string() << " at step " << r.checkpoint.step << "\n";
  return 0;
}

int cmd_run(const RunArgs& a) {
  const auto c = load_checkpoint(a.checkpoint);
  const auto r = transfer(c, load_audio(a.input), a.opts, a.seed);
  write_wav(a.out, r.audio);
  auto csv = a.out;
  csv.replace_extension(".csv");
  write_text(csv, features_csv(r.features));
  std::cout << "wrote " << a.out.string() << " (" << r.audio.size() << " samples) and " << csv.string() << "\n";
  return 0;
}

int cmd_grad_check(const GradCheckArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = ConfigFile::load(a.config).to_train_config();
  const std::size_t n = chunk_samples(a.seconds);
  AudioBuffer audio = a.input.empty() ? default_clip(n) : load_audio(a.input);
  if (audio.size() < n) throw UsageError("grad-check: input shorter than " + std::to_string(a.seconds) + " s");
  audio.samples.resize(n);
  Example ex{audio, extract_features(audio, cfg.model.use_z), "grad-check"};
  ad::GradCheckOptions opts;
  opts.coords_per_param = a.coords;
  opts.seed = a.seed;
  opts.eps = a.eps;
  const auto report = full_graph_grad_check(cfg.model, ex, a.seed, opts);
  bool ok = true;
  for (const auto& [name, c] : report) {
    const bool pass = c.max_rel_error < a.tolerance;
    ok = ok && pass;
    std::cout << (pass ? "ok   " : "FAIL ") << name << " max_rel_error " << c.max_rel_error << " checked " << c.checked
              << " kinks " << c.kinks.size() << "\n";
  }
  std::cout << "max relative error " << ad::max_error(report) << (ok ? " (pass)" : " (fail)") << "\n";
  return ok ? 0 : 1;
}

int cmd_figures(const FiguresArgs& a) {
  if (a.losslog.empty() && a.wavs.empty()) throw UsageError("figures: give --losslog and/or --wav");
  fs::create_directories(a.out);
  if (!a.losslog.empty()) {
    write_text(a.out / "loss_curve.csv", loss_curve_csv(read_loss_csv(a.losslog)));
    std::cout << "wrote " << (a.out / "loss_curve.csv").string() << "\n";
  }
  for (const auto& w : a.wavs) {
    auto audio = load_audio(w);
    const auto pgm = a.out / (w.stem().string() + ".pgm");
    write_text(pgm, spectrogram_pgm(audio));
    std::cout << "wrote " << pgm.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral modeling synthesis with a differentiable harmonic-plus-noise decoder"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  int code = 0;

  PrepareArgs pa;
  auto* prep = app.add_subcommand("prepare", "Cut audio into training chunks with feature sidecars and stats.txt");
  prep->add_option("--input", pa.input, "Directory of WAV files")->required()->check(CLI::ExistingDirectory);
  prep->add_option("--output", pa.output, "Dataset directory to write")->required();
  prep->add_flag("--with-mfcc", pa.with_mfcc, "Also write 30-coefficient MFCC files (default: off)");
  prep->add_option("--example-seconds", pa.example_seconds, "Chunk length in seconds (1 s hop)");
  prep->callback([&] { code = cmd_prepare(pa); });

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoint.smsd, loss.csv and config.conf");
  tr->add_option("--config", ta.config, "Configuration file")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", ta.data, "Dataset directory (prepared or raw WAVs)")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_flag("--resume", ta.resume, "Continue from <out>/checkpoint.smsd when present (default: off)");
  tr->footer("Environment: SMS_SEED overrides the config seed.");
  tr->callback([&] { code = cmd_train(ta); });

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Render an input through a trained model (timbre transfer)");
  run->add_option("--checkpoint", ra.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  run->add_option("--input", ra.input, "Input WAV")->required()->check(CLI::ExistingFile);
  run->add_option("--out", ra.out, "Output WAV; a .csv of the preconditioned f0/loudness goes next to it")->required();
  run->add_option("--octave-shift", ra.opts.octave_shift, "Octaves to shift f0");
  run->add_option("--loudness-shift", ra.opts.loudness_shift, "Loudness offset in dB");
  run->add_option("--mask-threshold", ra.opts.mask_threshold, "Masking threshold relative to the median score");
  run->add_option("--quiet", ra.opts.quiet, "Attenuation of masked frames in dB");
  run->add_option("--autotune", ra.opts.autotune, "Pull towards the nearest semitone, 0 to 1");
  run->add_flag("--use-statistics", ra.opts.use_statistics, "Match loudness moments to the training data (default: on)");
  run->add_flag_callback("--no-use-statistics", [&] { ra.opts.use_statistics = false; }, "Turn --use-statistics off");
  run->add_option("--seed", ra.seed, "Noise seed");
  run->callback([&] { code = cmd_run(ra); });

  GradCheckArgs ga;
  auto* gc = app.add_subcommand("grad-check", "Check 64-bit decode->render->loss gradients against long-double finite differences");
  gc->add_option("--config", ga.config, "Configuration file (default: built-in singing dimensions)")->check(CLI::ExistingFile);
  gc->add_option("--input", ga.input, "Input WAV (default: a 220 Hz sawtooth)")->check(CLI::ExistingFile);
  gc->add_option("--seconds", ga.seconds, "Clip length in seconds");
  gc->add_option("--coords", ga.coords, "Coordinates checked per parameter tensor");
  gc->add_option("--seed", ga.seed, "Parameter and sampling seed");
  gc->add_option("--tolerance", ga.tolerance, "Maximum relative error");
  gc->add_option("--eps", ga.eps, "Central-difference step");
  gc->callback([&] { code = cmd_grad_check(ga); });

  FiguresArgs fa;
  auto* fig = app.add_subcommand("figures", "Write a smoothed loss curve and log-magnitude spectrogram PGMs");
  fig->add_option("--losslog", fa.losslog, "Loss CSV from training")->check(CLI::ExistingFile);
  fig->add_option("--wav", fa.wavs, "WAV file(s) to draw (2048-point FFT)")->default_str("")->check(CLI::ExistingFile);
  fig->add_option("--out", fa.out, "Output directory")->required();
  fig->callback([&] { code = cmd_figures(fa); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "smsd: error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingDiverged& e) {
    std::cerr << "smsd: error: " << e.what() << "\n";
    return 3;
  } catch (const UsageError& e) {
    std::cerr << "smsd: error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "smsd: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "smsd: error: " << e.what() << "\n";
    return 1;
  }
  return code;
}
