#pragma once

// Iterative radix-2 FFT for power-of-two sizes. Twiddles are cached per
// (precision, size) in thread-local storage, so concurrent tapes never share
// mutable state.

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "smsd/error.hpp"

namespace smsd {

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

template <class T>
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), bitrev_(n), twiddle_(n / 2) {
    if (!is_power_of_two(n)) throw Error("fft size must be a power of two, got " + std::to_string(n));
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      bitrev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = {static_cast<T>(std::cos(a)), static_cast<T>(std::sin(a))};
    }
  }

  std::size_t size() const { return n_; }

  /// In-place forward transform, X_k = sum_n x_n e^{-2 pi i k n / N}.
  void forward(std::span<std::complex<T>> x) const { run(x, false); }

  /// In-place unnormalized inverse transform (no 1/N factor).
  void inverse_unscaled(std::span<std::complex<T>> x) const { run(x, true); }

 private:
  void run(std::span<std::complex<T>> x, bool inverse) const {
    if (x.size() != n_) throw Error("fft buffer size mismatch");
    for (std::size_t i = 0; i < n_; ++i)
      if (i < bitrev_[i]) std::swap(x[i], x[bitrev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          std::complex<T> w = twiddle_[j * step];
          if (inverse) w = std::conj(w);
          const std::complex<T> u = x[start + j];
          const std::complex<T> v = x[start + j + half] * w;
          x[start + j] = u + v;
          x[start + j + half] = u - v;
        }
      }
    }
  }

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<T>> twiddle_;
};

template <class T>
const FftPlan<T>& fft_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<FftPlan<T>>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan<T>>(n);
  return *slot;
}

/// Real-input FFT of `x` zero-padded (or truncated) to `n`; returns n/2+1 bins.
template <class T>
std::vector<std::complex<T>> rfft(std::span<const T> x, std::size_t n) {
  std::vector<std::complex<T>> buf(n);
  for (std::size_t i = 0; i < n && i < x.size(); ++i) buf[i] = x[i];
  fft_plan<T>(n).forward(buf);
  buf.resize(n / 2 + 1);
  return buf;
}

/// Inverse of rfft for a Hermitian half spectrum of n/2+1 bins; includes 1/n.
template <class T>
std::vector<T> irfft(std::span<const std::complex<T>> half, std::size_t n) {
  if (half.size() != n / 2 + 1) throw Error("irfft expects n/2+1 bins");
  std::vector<std::complex<T>> buf(n);
  for (std::size_t k = 0; k <= n / 2; ++k) buf[k] = half[k];
  for (std::size_t k = 1; k < n / 2; ++k) buf[n - k] = std::conj(half[k]);
  fft_plan<T>(n).inverse_unscaled(buf);
  std::vector<T> out(n);
  const T scale = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real() * scale;
  return out;
}

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace smsd
