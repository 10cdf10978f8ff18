#pragma once

// Little-endian binary checkpoint:
//   "SMSD" | u32 version | u32 count | count x tensor
//   tensor = u16 name length | name | u8 rank | u32 dims[rank] | float32 payload
// Step counter, config echo, dataset stats and optimizer moments are stored as
// ordinary tensors under the `meta/` and `adam/` prefixes.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "smsd/ad/tape.hpp"
#include "smsd/config.hpp"
#include "smsd/error.hpp"
#include "smsd/features.hpp"
#include "smsd/model.hpp"

namespace smsd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ad::TensorMap<float> params;
  ad::TensorMap<float> adam_m;
  ad::TensorMap<float> adam_v;
  std::uint64_t step = 0;
  TrainConfig config;
  DatasetStats stats;

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

inline void put_f32(std::string& s, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  put_u32(s, u);
}

/// Numeric config fields in a fixed order.
inline std::vector<double> config_vector(const TrainConfig& c) {
  const auto& m = c.model;
  return {double(m.n_harmonics), double(m.n_noise),   double(m.mlp_units),  double(m.mlp_layers),
          double(m.gru_units),   double(m.use_z),     double(m.z_dim),      double(m.z_gru_units),
          double(m.mfcc_count),  double(m.use_reverb), double(c.batch_size), double(c.steps),
          c.learning_rate,       c.lr_decay,          c.clip_norm,          c.example_seconds,
          double(c.seed)};
}

inline TrainConfig config_from_vector(const std::vector<double>& v) {
  if (v.size() != 17) throw IoError("checkpoint: meta/config has " + std::to_string(v.size()) + " fields, expected 17");
  auto sz = [](double d) { return static_cast<std::size_t>(d); };
  TrainConfig c;
  auto& m = c.model;
  m.n_harmonics = sz(v[0]);
  m.n_noise = sz(v[1]);
  m.mlp_units = sz(v[2]);
  m.mlp_layers = sz(v[3]);
  m.gru_units = sz(v[4]);
  m.use_z = v[5] != 0.0;
  m.z_dim = sz(v[6]);
  m.z_gru_units = sz(v[7]);
  m.mfcc_count = sz(v[8]);
  m.use_reverb = v[9] != 0.0;
  c.batch_size = sz(v[10]);
  c.steps = sz(v[11]);
  c.learning_rate = v[12];
  c.lr_decay = v[13];
  c.clip_norm = v[14];
  c.example_seconds = v[15];
  c.seed = static_cast<std::uint64_t>(v[16]);
  return c;
}

// Metadata doubles are stored bit-exactly: the 64-bit pattern is split into
// 22/21/21-bit chunks, each an integer that float32 represents exactly.
inline ad::Tensor<float> pack_doubles(const std::vector<double>& v) {
  ad::Tensor<float> t({v.size(), 3});
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t u;
    std::memcpy(&u, &v[i], sizeof u);
    t.at(i, 0) = static_cast<float>(u >> 42);
    t.at(i, 1) = static_cast<float>((u >> 21) & 0x1fffff);
    t.at(i, 2) = static_cast<float>(u & 0x1fffff);
  }
  return t;
}

inline std::vector<double> unpack_doubles(const ad::Tensor<float>& t, const std::string& name) {
  if (t.rank() != 2 || t.shape[1] != 3) throw IoError("checkpoint: malformed " + name);
  std::vector<double> v(t.shape[0]);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint64_t u = (static_cast<std::uint64_t>(t.at(i, 0)) << 42) |
                            (static_cast<std::uint64_t>(t.at(i, 1)) << 21) | static_cast<std::uint64_t>(t.at(i, 2));
    std::memcpy(&v[i], &u, sizeof u);
  }
  return v;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  const unsigned char* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw IoError(std::string("checkpoint truncated while reading ") + what);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Every tensor written for `c`, in name order.
inline ad::TensorMap<float> checkpoint_tensors(const Checkpoint& c) {
  ad::TensorMap<float> all = c.params;
  for (const auto& [n, t] : c.adam_m) all["adam/m/" + n] = t;
  for (const auto& [n, t] : c.adam_v) all["adam/v/" + n] = t;
  all["meta/step"] = detail::pack_doubles({double(c.step)});
  all["meta/config"] = detail::pack_doubles(detail::config_vector(c.config));
  all["meta/stats"] = detail::pack_doubles({c.stats.mean_midi_pitch, c.stats.mean_loudness_db, c.stats.std_loudness_db});
  return all;
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  const auto all = checkpoint_tensors(c);
  std::string s = "SMSD";
  detail::put_u32(s, kCheckpointVersion);
  detail::put_u32(s, static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, t] : all) {
    if (name.size() > 0xffff) throw Error("checkpoint: tensor name too long");
    if (t.rank() > 0xff) throw Error("checkpoint: tensor rank too large");
    detail::put_u16(s, static_cast<std::uint16_t>(name.size()));
    s += name;
    s.push_back(static_cast<char>(t.rank()));
    for (std::size_t d : t.shape) detail::put_u32(s, static_cast<std::uint32_t>(d));
    for (float v : t.values) detail::put_f32(s, v);
  }
  return s;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::Reader r(bytes);
  if (std::memcmp(r.take(4, "magic"), "SMSD", 4) != 0) throw IoError("checkpoint: bad magic (not an SMSD checkpoint)");
  const std::uint32_t version = detail::read_u32(r.take(4, "version"));
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t count = detail::read_u32(r.take(4, "count"));
  ad::TensorMap<float> all;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t len = detail::read_u16(r.take(2, "name length"));
    const auto* np = r.take(len, "name");
    std::string name(reinterpret_cast<const char*>(np), len);
    const std::size_t rank = *r.take(1, "rank");
    ad::Shape shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = detail::read_u32(r.take(4, "dims"));
      if (d != 0 && total > (bytes.size() / 4) / d) throw IoError("checkpoint: tensor '" + name + "' is larger than the file");
      total *= d;
    }
    const auto* p = r.take(total * 4, "tensor payload");
    std::vector<float> values(total);
    for (std::size_t k = 0; k < total; ++k) {
      const std::uint32_t u = detail::read_u32(p + 4 * k);
      std::memcpy(&values[k], &u, sizeof u);
    }
    if (!all.emplace(name, ad::Tensor<float>(std::move(shape), std::move(values))).second)
      throw IoError("checkpoint: duplicate tensor '" + name + "'");
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes after last tensor");

  Checkpoint c;
  auto meta = [&](const std::string& name) {
    auto it = all.find(name);
    if (it == all.end()) throw IoError("checkpoint: missing " + name);
    return detail::unpack_doubles(it->second, name);
  };
  const auto step = meta("meta/step");
  if (step.size() != 1) throw IoError("checkpoint: malformed meta/step");
  c.step = static_cast<std::uint64_t>(step[0]);
  c.config = detail::config_from_vector(meta("meta/config"));
  const auto stats = meta("meta/stats");
  if (stats.size() != 3) throw IoError("checkpoint: malformed meta/stats");
  c.stats = {stats[0], stats[1], stats[2]};
  for (auto& [name, t] : all) {
    if (name.rfind("meta/", 0) == 0) continue;
    if (name.rfind("adam/m/", 0) == 0) c.adam_m[name.substr(7)] = std::move(t);
    else if (name.rfind("adam/v/", 0) == 0) c.adam_v[name.substr(7)] = std::move(t);
    else c.params[name] = std::move(t);
  }
  return c;
}

/// Throws ShapeError naming the first tensor that is missing, unexpected or
/// shaped differently from what `cfg` builds.
inline void check_compatible(const ad::TensorMap<float>& params, const ModelConfig& cfg) {
  const auto expected = expected_shapes(cfg);
  for (const auto& [name, shape] : expected) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape != shape)
      throw ShapeError("shape mismatch for tensor '" + name + "': checkpoint has " + ad::shape_str(it->second.shape) +
                       ", config expects " + ad::shape_str(shape));
  }
  for (const auto& [name, t] : params)
    if (!expected.count(name)) throw ShapeError("checkpoint has unexpected tensor '" + name + "'");
}

/// Atomic: writes `<path>.tmp` then renames over `path`.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto c = deserialize_checkpoint(bytes);
  check_compatible(c.params, c.config.model);
  return c;
}

/// Loads and verifies the tensors against an externally supplied model config.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto c = deserialize_checkpoint(bytes);
  check_compatible(c.params, cfg);
  return c;
}

}  // namespace smsd
