#pragma once

// Core value types (AudioBuffer, FrameSeries, Spectrogram), WAV I/O and
// windowed-sinc resampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "smsd/error.hpp"

namespace smsd {

inline constexpr double kSampleRate = 16000.0;
inline constexpr double kFrameRate = 250.0;
inline constexpr double kMfccFrameRate = 125.0;

/// Mono audio at a fixed sample rate.
struct AudioBuffer {
  std::vector<double> samples;
  double sample_rate = kSampleRate;

  AudioBuffer() = default;
  AudioBuffer(std::vector<double> s, double sr) : samples(std::move(s)), sample_rate(sr) { validate(); }

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }

  void validate() const {
    if (!(sample_rate > 0)) throw Error("sample_rate must be positive");
    for (double v : samples)
      if (!std::isfinite(v)) throw Error("audio contains non-finite samples");
  }
};

/// Per-frame vectors at a fixed frame rate, stored row-major.
struct FrameSeries {
  std::vector<double> data;
  std::size_t dim = 1;
  double frame_rate = kFrameRate;

  FrameSeries() = default;
  FrameSeries(std::size_t frames, std::size_t d, double rate)
      : data(frames * d, 0.0), dim(d), frame_rate(rate) {}
  FrameSeries(std::vector<double> values, std::size_t d, double rate)
      : data(std::move(values)), dim(d), frame_rate(rate) {
    if (dim == 0 || data.size() % dim != 0) throw ShapeError("frame data not divisible by dim");
  }

  std::size_t frames() const { return dim == 0 ? 0 : data.size() / dim; }
  bool empty() const { return data.empty(); }
  double& at(std::size_t t, std::size_t d = 0) { return data[t * dim + d]; }
  double at(std::size_t t, std::size_t d = 0) const { return data[t * dim + d]; }
  std::span<const double> row(std::size_t t) const { return {data.data() + t * dim, dim}; }
  std::span<double> row(std::size_t t) { return {data.data() + t * dim, dim}; }

  void truncate(std::size_t n) {
    if (n < frames()) data.resize(n * dim);
  }
  /// Column d as a dense vector.
  std::vector<double> column(std::size_t d = 0) const {
    std::vector<double> out(frames());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = at(t, d);
    return out;
  }
  bool operator==(const FrameSeries&) const = default;
};

/// Magnitude spectrogram [num_frames x (fft_size/2 + 1)], row-major.
struct Spectrogram {
  std::vector<double> mags;
  std::size_t fft_size = 0;
  std::size_t hop = 0;
  std::size_t num_frames = 0;

  std::size_t num_bins() const { return fft_size / 2 + 1; }
  double at(std::size_t frame, std::size_t bin) const { return mags[frame * num_bins() + bin]; }
};

// ---------------------------------------------------------------------------
// Resampling

/// Windowed-sinc resampler, 64-tap Blackman-windowed kernel at the output
/// cutoff (anti-aliased when downsampling).
inline AudioBuffer resample(const AudioBuffer& in, double target_rate) {
  if (!(target_rate > 0)) throw Error("target sample rate must be positive");
  if (in.sample_rate == target_rate || in.empty()) return AudioBuffer(in.samples, target_rate);
  constexpr int kTaps = 64;
  const double ratio = target_rate / in.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  const double half_width = (kTaps / 2) / cutoff;
  const auto out_len = static_cast<std::size_t>(std::floor(static_cast<double>(in.size()) * ratio));
  std::vector<double> out(out_len);
  const auto n_in = static_cast<std::ptrdiff_t>(in.size());
  for (std::size_t m = 0; m < out_len; ++m) {
    const double center = static_cast<double>(m) / ratio;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(center - half_width));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(center + half_width));
    double acc = 0.0;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(lo, 0); j <= std::min(hi, n_in - 1); ++j) {
      const double d = center - static_cast<double>(j);
      const double x = d * cutoff;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double u = (d + half_width) / (2.0 * half_width);  // 0..1 across the window
      const double w = 0.42 - 0.5 * std::cos(2 * std::numbers::pi * u) + 0.08 * std::cos(4 * std::numbers::pi * u);
      acc += in.samples[static_cast<std::size_t>(j)] * cutoff * sinc * w;
    }
    out[m] = acc;
  }
  return AudioBuffer(std::move(out), target_rate);
}

// ---------------------------------------------------------------------------
// WAV I/O

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

/// Reads PCM16 or float32 WAV data, downmixing to mono. Sample rate is kept.
inline AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError(where + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size() && std::memcmp(chunk, "data", 4) != 0) throw IoError(where + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw IoError(where + ": short fmt chunk");
      format = detail::read_u16(bytes.data() + body);
      channels = detail::read_u16(bytes.data() + body + 2);
      rate = detail::read_u32(bytes.data() + body + 4);
      bits = detail::read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && size >= 26) format = detail::read_u16(bytes.data() + body + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
    }
    pos = body + size + (size & 1);
  }
  if (format == 0 || channels == 0 || rate == 0) throw IoError(where + ": missing fmt chunk");
  if (data == nullptr) throw IoError(where + ": missing data chunk");

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) throw IoError(where + ": unsupported WAV encoding (need PCM16 or float32)");
  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  std::vector<double> out(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * width;
      if (pcm16) {
        acc += static_cast<std::int16_t>(detail::read_u16(p)) / 32768.0;
      } else {
        const std::uint32_t u = detail::read_u32(p);
        float v;
        std::memcpy(&v, &u, sizeof v);
        acc += v;
      }
    }
    out[i] = acc / channels;
  }
  return AudioBuffer(std::move(out), rate);
}

/// Reads a WAV file and resamples it to the internal 16 kHz rate.
inline AudioBuffer load_audio(const std::filesystem::path& path) {
  return resample(read_wav(path), kSampleRate);
}

/// Writes mono float32 WAV at the buffer's sample rate.
inline void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  std::string s;
  const auto n = static_cast<std::uint32_t>(audio.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(audio.sample_rate));
  s.append("RIFF");
  detail::put_u32(s, 36 + n * 4);
  s.append("WAVEfmt ");
  detail::put_u32(s, 16);
  detail::put_u16(s, 3);
  detail::put_u16(s, 1);
  detail::put_u32(s, rate);
  detail::put_u32(s, rate * 4);
  detail::put_u16(s, 4);
  detail::put_u16(s, 32);
  s.append("data");
  detail::put_u32(s, n * 4);
  for (double v : audio.samples) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, sizeof u);
    detail::put_u32(s, u);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace smsd
