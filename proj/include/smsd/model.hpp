#pragma once

// Decoder network: per-input MLPs -> concat -> GRU -> concat with the MLP
// outputs -> output MLP -> harmonic and noise heads. Optional z-encoder turns
// 30 MFCCs at 125 frames/s into a 16-dim latent at 250 frames/s.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "smsd/ad/dsp_ops.hpp"
#include "smsd/ad/ops.hpp"
#include "smsd/ad/tape.hpp"
#include "smsd/features.hpp"
#include "smsd/synth.hpp"

namespace smsd {

struct ModelConfig {
  std::size_t n_harmonics = kDefaultHarmonics;
  std::size_t n_noise = kDefaultNoiseBands;
  std::size_t mlp_units = 512;
  std::size_t mlp_layers = 3;
  std::size_t gru_units = 512;
  bool use_z = false;
  std::size_t z_dim = 16;
  std::size_t z_gru_units = 512;
  std::size_t mfcc_count = 30;
  bool use_reverb = true;

  void validate() const {
    if (n_harmonics < 1 || n_harmonics > 100) throw Error("n_harmonics must be in [1, 100]");
    if (n_noise < 2) throw Error("n_noise must be >= 2");
    if (mlp_units == 0 || mlp_layers == 0 || gru_units == 0 || z_dim == 0 || z_gru_units == 0 || mfcc_count == 0)
      throw Error("model dimensions must be positive");
  }
  bool operator==(const ModelConfig&) const = default;
};

template <class T>
using VarMap = std::map<std::string, ad::Var<T>>;

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

template <class T>
ad::Tensor<T> glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  ad::Tensor<T> t({fan_in, fan_out});
  for (auto& v : t.values) v = static_cast<T>(dist(rng));
  return t;
}

/// [H x 3H] recurrent kernel, each gate block an orthogonal matrix (QR of a
/// Gaussian draw).
template <class T>
ad::Tensor<T> orthogonal_gates(std::size_t hidden, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ad::Tensor<T> t({hidden, 3 * hidden});
  for (std::size_t gate = 0; gate < 3; ++gate) {
    Eigen::MatrixXd a(hidden, hidden);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    // Sign fix so the distribution is uniform over orthogonal matrices.
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
      if (r(j, j) < 0) q.col(j) *= -1.0;
    for (std::size_t i = 0; i < hidden; ++i)
      for (std::size_t j = 0; j < hidden; ++j) t.at(i, gate * hidden + j) = static_cast<T>(q(i, j));
  }
  return t;
}

template <class T>
void add_mlp(ad::TensorMap<T>& p, const std::string& prefix, std::size_t in, const ModelConfig& cfg, std::mt19937_64& rng) {
  std::size_t fan_in = in;
  for (std::size_t l = 0; l < cfg.mlp_layers; ++l) {
    const std::string base = prefix + "/layer" + std::to_string(l);
    p[base + "/w"] = glorot<T>(fan_in, cfg.mlp_units, rng);
    p[base + "/b"] = ad::Tensor<T>({cfg.mlp_units});
    p[base + "/norm_gain"] = ad::Tensor<T>({cfg.mlp_units}, std::vector<T>(cfg.mlp_units, T(1)));
    p[base + "/norm_bias"] = ad::Tensor<T>({cfg.mlp_units});
    fan_in = cfg.mlp_units;
  }
}

template <class T>
void add_gru(ad::TensorMap<T>& p, const std::string& prefix, std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
  p[prefix + "/w_x"] = glorot<T>(in, 3 * hidden, rng);
  p[prefix + "/b_x"] = ad::Tensor<T>({3 * hidden});
  p[prefix + "/w_h"] = orthogonal_gates<T>(hidden, rng);
  p[prefix + "/b_h"] = ad::Tensor<T>({3 * hidden});
}

}  // namespace detail

/// Names of the MLP stacks feeding the GRU, in concatenation order.
inline std::vector<std::string> decoder_inputs(const ModelConfig& cfg) {
  std::vector<std::string> names = {"f0_mlp", "loudness_mlp"};
  if (cfg.use_z) names.push_back("z_mlp");
  return names;
}

/// Freshly initialized parameters: Glorot-uniform dense kernels, orthogonal
/// recurrent kernels, zero biases, unit norm gains, zero reverb IR.
template <class T = float>
ad::TensorMap<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ad::TensorMap<T> p;
  const auto inputs = decoder_inputs(cfg);
  for (const auto& name : inputs) detail::add_mlp(p, "decoder/" + name, name == "z_mlp" ? cfg.z_dim : 1, cfg, rng);
  detail::add_gru(p, "decoder/gru", inputs.size() * cfg.mlp_units, cfg.gru_units, rng);
  detail::add_mlp(p, "decoder/out_mlp", cfg.gru_units + inputs.size() * cfg.mlp_units, cfg, rng);
  p["decoder/harmonic_head/w"] = detail::glorot<T>(cfg.mlp_units, cfg.n_harmonics + 1, rng);
  p["decoder/harmonic_head/b"] = ad::Tensor<T>({cfg.n_harmonics + 1});
  p["decoder/noise_head/w"] = detail::glorot<T>(cfg.mlp_units, cfg.n_noise, rng);
  p["decoder/noise_head/b"] = ad::Tensor<T>({cfg.n_noise});
  if (cfg.use_z) {
    p["z_encoder/norm_gain"] = ad::Tensor<T>({cfg.mfcc_count}, std::vector<T>(cfg.mfcc_count, T(1)));
    p["z_encoder/norm_bias"] = ad::Tensor<T>({cfg.mfcc_count});
    detail::add_gru(p, "z_encoder/gru", cfg.mfcc_count, cfg.z_gru_units, rng);
    p["z_encoder/dense/w"] = detail::glorot<T>(cfg.z_gru_units, cfg.z_dim, rng);
    p["z_encoder/dense/b"] = ad::Tensor<T>({cfg.z_dim});
  }
  if (cfg.use_reverb) p["reverb/ir"] = ad::Tensor<T>({kReverbLength});
  return p;
}

/// Expected shape of every parameter for `cfg`.
inline std::map<std::string, ad::Shape> expected_shapes(const ModelConfig& cfg) {
  std::map<std::string, ad::Shape> out;
  for (const auto& [name, t] : init_params<float>(cfg, 0)) out[name] = t.shape;
  return out;
}

// ---------------------------------------------------------------------------
// Forward graphs

template <class T>
const ad::Var<T>& param(const VarMap<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

template <class T>
ad::Var<T> dense(const ad::Var<T>& x, const VarMap<T>& p, const std::string& prefix) {
  return ad::add_bias(ad::matmul(x, param(p, prefix + "/w")), param(p, prefix + "/b"));
}

/// `layers` x (Dense -> LayerNorm (learned gain/bias) -> ReLU).
template <class T>
ad::Var<T> mlp_forward(ad::Var<T> x, const VarMap<T>& p, const std::string& prefix, std::size_t layers) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = prefix + "/layer" + std::to_string(l);
    x = dense(x, p, base);
    x = ad::add_bias(ad::mul_row(ad::layer_norm(x), param(p, base + "/norm_gain")), param(p, base + "/norm_bias"));
    x = ad::relu(x);
  }
  return x;
}

template <class T>
ad::Var<T> gru_forward(const ad::Var<T>& x, const VarMap<T>& p, const std::string& prefix) {
  auto xproj = ad::add_bias(ad::matmul(x, param(p, prefix + "/w_x")), param(p, prefix + "/b_x"));
  return ad::gru_recurrence(xproj, param(p, prefix + "/w_h"), param(p, prefix + "/b_h"));
}

/// MFCC [T125 x 30] -> per-coefficient normalization over time -> GRU ->
/// dense to z_dim -> linear upsampling to `target_frames` (default 2 x T125).
template <class T>
ad::Var<T> z_encode(const ad::Var<T>& mfcc, const VarMap<T>& p, const ModelConfig& cfg,
                    std::optional<std::size_t> target_frames = std::nullopt) {
  ad::detail::require_matrix("z_encode", mfcc);
  if (mfcc.cols() != cfg.mfcc_count)
    throw ShapeError("z_encode: expected " + std::to_string(cfg.mfcc_count) + " MFCCs per frame, got " +
                     ad::shape_str(mfcc.shape()));
  auto x = ad::transpose(ad::layer_norm(ad::transpose(mfcc)));
  x = ad::add_bias(ad::mul_row(x, param(p, "z_encoder/norm_gain")), param(p, "z_encoder/norm_bias"));
  auto h = gru_forward(x, p, "z_encoder/gru");
  auto z = dense(h, p, "z_encoder/dense");
  return ad::upsample_linear(z, target_frames.value_or(2 * mfcc.rows()));
}

/// y = 2 * sigmoid(x)^ln(10) + 1e-7
template <class T>
ad::Var<T> squash(const ad::Var<T>& x) {
  return ad::add_scalar(ad::scale(ad::power(ad::sigmoid(x), static_cast<T>(std::log(10.0))), T(2)), T(1e-7));
}

template <class T>
struct DecoderOutput {
  ad::Var<T> amplitude;     // [T x 1]
  ad::Var<T> distribution;  // [T x K], rows sum to 1
  ad::Var<T> noise;         // [T x N]
};

/// Decoder inputs scaled to roughly [0, 1]: MIDI/127 (0 for unvoiced f0 <= 0)
/// and (dB + 120)/120.
template <class T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> scaled_inputs(const ConditioningFeatures& f) {
  const std::size_t n = f.frames();
  ad::Tensor<T> f0({n, 1}), ld({n, 1});
  for (std::size_t t = 0; t < n; ++t) {
    const double hz = f.f0_hz.at(t);
    f0[t] = static_cast<T>(hz > 0.0 ? std::max(hz_to_midi(hz), 0.0) / 127.0 : 0.0);
    ld[t] = static_cast<T>((f.loudness_db.at(t) + 120.0) / 120.0);
  }
  return {std::move(f0), std::move(ld)};
}

template <class T>
DecoderOutput<T> decode(ad::Tape<T>& tape, const ConditioningFeatures& f, const VarMap<T>& p, const ModelConfig& cfg) {
  if (cfg.use_z && !f.mfcc) throw Error("decode: model uses z but features carry no MFCC");
  const std::size_t frames = f.frames();
  auto [f0_in, ld_in] = scaled_inputs<T>(f);
  std::vector<ad::Var<T>> branches;
  branches.push_back(mlp_forward(tape.constant(std::move(f0_in)), p, "decoder/f0_mlp", cfg.mlp_layers));
  branches.push_back(mlp_forward(tape.constant(std::move(ld_in)), p, "decoder/loudness_mlp", cfg.mlp_layers));
  if (cfg.use_z) {
    auto z = z_encode(tape.constant(to_tensor<T>(*f.mfcc)), p, cfg, frames);
    branches.push_back(mlp_forward(z, p, "decoder/z_mlp", cfg.mlp_layers));
  }
  auto h = gru_forward(ad::concat(branches), p, "decoder/gru");
  std::vector<ad::Var<T>> skip = {h};
  skip.insert(skip.end(), branches.begin(), branches.end());
  auto out = mlp_forward(ad::concat(skip), p, "decoder/out_mlp", cfg.mlp_layers);
  auto harm = squash(dense(out, p, "decoder/harmonic_head"));
  auto amplitude = ad::slice(harm, 0, 1);
  auto dist = ad::slice(harm, 1, cfg.n_harmonics + 1);
  dist = ad::scale_rows(dist, ad::power(ad::row_sum(dist), T(-1)));
  return {amplitude, dist, squash(dense(out, p, "decoder/noise_head"))};
}

/// Double-precision inference helper.
inline SynthControls decode_controls(const ConditioningFeatures& f, const ad::TensorMap<float>& params, const ModelConfig& cfg) {
  ad::Tape<double> tape;
  VarMap<double> p;
  for (const auto& [name, t] : params) p.emplace(name, tape.constant(t.cast<double>()));
  auto out = decode(tape, f, p, cfg);
  auto series = [](const ad::Var<double>& v) {
    return FrameSeries(v.value().values, v.cols(), kFrameRate);
  };
  return {series(out.amplitude), series(out.distribution), series(out.noise), f.f0_hz};
}

}  // namespace smsd
