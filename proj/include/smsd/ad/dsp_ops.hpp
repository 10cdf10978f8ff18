#pragma once

// Differentiable signal-processing ops with analytic pullbacks. Signals are
// rank-1 tensors [L]; framed data and time series are [rows x cols].

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <vector>

#include "smsd/ad/ops.hpp"
#include "smsd/ad/tape.hpp"
#include "smsd/fft.hpp"
#include "smsd/signal.hpp"

namespace smsd::ad {

/// Centered, reflection-padded frames of a signal: [L] -> [ceil(L/hop) x size].
template <class T>
Var<T> frame(const Var<T>& signal, std::size_t size, std::size_t hop) {
  const std::size_t len = signal.size();
  if (len == 0) throw Error("frame: empty signal");
  if (hop == 0) throw Error("frame: hop must be positive");
  const std::size_t frames = centered_frame_count(len, hop);
  Tensor<T> out({frames, size});
  const auto& x = signal.value().values;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < size; ++j) out.at(t, j) = x[frame_source_index(t, j, size, hop, len)];
  const std::size_t si = signal.id();
  return signal.tape().push(std::move(out), {si}, [si, frames, size, hop, len](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(si)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(si);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t j = 0; j < size; ++j) gx[frame_source_index(t, j, size, hop, len)] += g[t * size + j];
  });
}

/// Sums centered frames [F x W] into a signal of `out_len` samples. Frame t
/// covers samples [t*hop - W/2, t*hop + W/2); samples outside are dropped.
template <class T>
Var<T> overlap_add(const Var<T>& frames, std::size_t hop, std::size_t out_len) {
  detail::require_matrix("overlap_add", frames);
  const std::size_t f = frames.rows(), w = frames.cols();
  Tensor<T> out({out_len});
  const auto& x = frames.value().values;
  auto target = [=](std::size_t t, std::size_t j) -> std::ptrdiff_t {
    return static_cast<std::ptrdiff_t>(t * hop + j) - static_cast<std::ptrdiff_t>(w / 2);
  };
  for (std::size_t t = 0; t < f; ++t)
    for (std::size_t j = 0; j < w; ++j) {
      const auto n = target(t, j);
      if (n >= 0 && n < static_cast<std::ptrdiff_t>(out_len)) out[static_cast<std::size_t>(n)] += x[t * w + j];
    }
  const std::size_t fi = frames.id();
  return frames.tape().push(std::move(out), {fi}, [fi, f, w, out_len, target](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(fi)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(fi);
    for (std::size_t t = 0; t < f; ++t)
      for (std::size_t j = 0; j < w; ++j) {
        const auto n = target(t, j);
        if (n >= 0 && n < static_cast<std::ptrdiff_t>(out_len)) gx[t * w + j] += g[static_cast<std::size_t>(n)];
      }
  });
}

/// Per-row magnitude of the real FFT: [R x N] -> [R x (N/2+1)]. The
/// pullback uses d|X_k|/dx = Re(conj(X_k)/|X_k| e^{-i2pi kn/N}); bins with
/// |X_k| == 0 contribute zero.
template <class T>
Var<T> fft_real_mag(const Var<T>& x) {
  detail::require_matrix("fft_real_mag", x);
  const std::size_t r = x.rows(), n = x.cols();
  if (!is_power_of_two(n)) throw ShapeError("fft_real_mag: row length must be a power of two, got " + shape_str(x.shape()));
  const std::size_t bins = n / 2 + 1;
  auto spectra = std::make_shared<std::vector<std::complex<T>>>(r * bins);
  Tensor<T> out({r, bins});
  const auto& plan = fft_plan<T>(n);
  std::vector<std::complex<T>> buf(n);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < n; ++j) buf[j] = x.value().at(i, j);
    plan.forward(buf);
    for (std::size_t k = 0; k < bins; ++k) {
      (*spectra)[i * bins + k] = buf[k];
      out.at(i, k) = std::abs(buf[k]);
    }
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, r, n, bins, spectra](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    const auto& mags = tp.value(self).values;
    auto& gx = tp.grad(xi);
    const auto& plan = fft_plan<T>(n);
    std::vector<std::complex<T>> buf(n);
    for (std::size_t i = 0; i < r; ++i) {
      std::fill(buf.begin(), buf.end(), std::complex<T>{});
      for (std::size_t k = 0; k < bins; ++k) {
        const T m = mags[i * bins + k];
        if (m > T(0)) buf[k] = g[i * bins + k] * (*spectra)[i * bins + k] / m;
      }
      plan.inverse_unscaled(buf);
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += buf[j].real();
    }
  });
}

/// Hann-windowed magnitude STFT of a signal, matching smsd::stft.
template <class T>
Var<T> stft_mag(const Var<T>& signal, std::size_t fft_size, std::size_t hop) {
  check_stft_args(signal.size(), fft_size, hop);
  const auto w = hann_window(fft_size);
  auto window = signal.tape().constant(Tensor<T>({fft_size}, std::vector<T>(w.begin(), w.end())));
  return fft_real_mag(mul_row(frame(signal, fft_size, hop), window));
}

/// Hamming overlap-add upsampling along rows: [T x D] -> [T*hop x D].
template <class T>
Var<T> upsample_hamming(const Var<T>& x, std::size_t hop) {
  detail::require_matrix("upsample_hamming", x);
  if (hop == 0) throw Error("upsample_hamming: hop must be >= 1");
  const std::size_t frames = x.rows(), d = x.cols(), n_out = frames * hop;
  Tensor<T> out({n_out, d});
  for (std::size_t n = 0; n < n_out; ++n) {
    const auto tap = hamming_tap(n, hop, frames);
    const T wl = static_cast<T>(tap.w_left), wr = static_cast<T>(tap.w_right);
    for (std::size_t j = 0; j < d; ++j) {
      T v = wl * x.value().at(tap.frame, j);
      if (tap.w_right > 0.0) v += wr * x.value().at(tap.frame + 1, j);
      out.at(n, j) = v;
    }
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, frames, d, hop, n_out](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xi);
    for (std::size_t n = 0; n < n_out; ++n) {
      const auto tap = hamming_tap(n, hop, frames);
      const T wl = static_cast<T>(tap.w_left), wr = static_cast<T>(tap.w_right);
      for (std::size_t j = 0; j < d; ++j) {
        gx[tap.frame * d + j] += wl * g[n * d + j];
        if (tap.w_right > 0.0) gx[(tap.frame + 1) * d + j] += wr * g[n * d + j];
      }
    }
  });
}

/// Align-corners linear interpolation along rows: [T x D] -> [target x D].
template <class T>
Var<T> upsample_linear(const Var<T>& x, std::size_t target) {
  detail::require_matrix("upsample_linear", x);
  if (x.rows() == 0 || target == 0) throw Error("upsample_linear: empty input or target");
  const std::size_t src = x.rows(), d = x.cols();
  Tensor<T> out({target, d});
  for (std::size_t i = 0; i < target; ++i) {
    const auto tap = linear_tap(i, src, target);
    const T f = static_cast<T>(tap.frac);
    for (std::size_t j = 0; j < d; ++j)
      out.at(i, j) = x.value().at(tap.lo, j) + f * (x.value().at(tap.hi, j) - x.value().at(tap.lo, j));
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, src, d, target](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xi);
    for (std::size_t i = 0; i < target; ++i) {
      const auto tap = linear_tap(i, src, target);
      const T f = static_cast<T>(tap.frac);
      for (std::size_t j = 0; j < d; ++j) {
        gx[tap.lo * d + j] += (T(1) - f) * g[i * d + j];
        gx[tap.hi * d + j] += f * g[i * d + j];
      }
    }
  });
}

/// Phase of the fundamental per sample: phase[0] = 0 and
/// phase[n] = 2pi * sum_{m<n} f0[m] / sample_rate, wrapped to [0, 2pi).
inline std::vector<double> fundamental_phase(const std::vector<double>& f0, double sample_rate) {
  std::vector<double> phase(f0.size());
  double acc = 0.0;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t n = 0; n < f0.size(); ++n) {
    phase[n] = acc;
    acc = std::fmod(acc + two_pi * f0[n] / sample_rate, two_pi);
  }
  return phase;
}

/// Sinusoid bank y[n] = sum_k amps[n,k] sin((k+1) phase[n]). Partials whose
/// instantaneous frequency (k+1) f0[n] reaches sample_rate/2 are silent.
/// f0 is a constant (no gradient flows to it).
template <class T>
Var<T> harmonic_oscillator(const Var<T>& amps, std::shared_ptr<const std::vector<double>> f0, double sample_rate) {
  detail::require_matrix("harmonic_oscillator", amps);
  const std::size_t n_samples = amps.rows(), k = amps.cols();
  if (f0->size() != n_samples)
    throw ShapeError("harmonic_oscillator: f0 has " + std::to_string(f0->size()) + " samples, amplitudes " +
                     shape_str(amps.shape()));
  auto phase = std::make_shared<const std::vector<double>>(fundamental_phase(*f0, sample_rate));
  const double nyquist = sample_rate / 2.0;
  // Calls fn(n, harmonic index, sin value) for every audible partial.
  auto for_each_partial = [=](auto&& fn) {
    for (std::size_t n = 0; n < n_samples; ++n) {
      const double f = (*f0)[n];
      if (f <= 0.0) continue;
      const double s1 = std::sin((*phase)[n]);
      const double c2 = 2.0 * std::cos((*phase)[n]);
      double prev = 0.0, cur = s1;  // sin(0*phi), sin(1*phi)
      for (std::size_t h = 0; h < k; ++h) {
        if (static_cast<double>(h + 1) * f >= nyquist) break;
        fn(n, h, cur);
        const double next = c2 * cur - prev;
        prev = cur;
        cur = next;
      }
    }
  };
  Tensor<T> out({n_samples});
  const auto& a = amps.value().values;
  std::vector<double> acc(n_samples, 0.0);
  for_each_partial([&](std::size_t n, std::size_t h, double s) { acc[n] += static_cast<double>(a[n * k + h]) * s; });
  for (std::size_t n = 0; n < n_samples; ++n) out[n] = static_cast<T>(acc[n]);
  const std::size_t ai = amps.id();
  return amps.tape().push(std::move(out), {ai}, [ai, k, for_each_partial](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(ai)) return;
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ai);
    for_each_partial([&](std::size_t n, std::size_t h, double s) { ga[n * k + h] += g[n] * static_cast<T>(s); });
  });
}

/// Frequency-domain FIR filtering of fixed excitation frames. `spectra`
/// holds rfft(window * noise_l) for every frame l, [F x (N/2+1)]. Output
/// frame l is irfft(H_l * X_l), [F x N]; H is real, non-negative.
template <class T>
Var<T> filter_frames(const Var<T>& magnitudes, std::shared_ptr<const std::vector<std::complex<T>>> spectra,
                     std::size_t fft_size) {
  detail::require_matrix("filter_frames", magnitudes);
  const std::size_t f = magnitudes.rows(), bins = fft_size / 2 + 1;
  if (magnitudes.cols() != bins || spectra->size() != f * bins)
    throw ShapeError("filter_frames: expected [" + std::to_string(f) + " x " + std::to_string(bins) + "] magnitudes, got " +
                     shape_str(magnitudes.shape()));
  Tensor<T> out({f, fft_size});
  std::vector<std::complex<T>> half(bins);
  for (std::size_t l = 0; l < f; ++l) {
    for (std::size_t b = 0; b < bins; ++b) half[b] = magnitudes.value().at(l, b) * (*spectra)[l * bins + b];
    const auto y = irfft<T>(half, fft_size);
    std::copy(y.begin(), y.end(), out.values.begin() + static_cast<std::ptrdiff_t>(l * fft_size));
  }
  const std::size_t mi = magnitudes.id();
  return magnitudes.tape().push(std::move(out), {mi}, [mi, f, bins, fft_size, spectra](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(mi)) return;
    const auto& g = tp.grad(self);
    auto& gm = tp.grad(mi);
    const auto& plan = fft_plan<T>(fft_size);
    std::vector<std::complex<T>> buf(fft_size);
    const T inv_n = T(1) / static_cast<T>(fft_size);
    for (std::size_t l = 0; l < f; ++l) {
      for (std::size_t j = 0; j < fft_size; ++j) buf[j] = g[l * fft_size + j];
      plan.forward(buf);
      for (std::size_t b = 0; b < bins; ++b) {
        const T weight = (b == 0 || b == bins - 1) ? inv_n : T(2) * inv_n;
        gm[l * bins + b] += weight * std::real((*spectra)[l * bins + b] * std::conj(buf[b]));
      }
    }
  });
}

/// Causal linear convolution truncated to the first input's length:
/// out[n] = sum_m a[n-m] b[m]. Computed with FFTs.
template <class T>
Var<T> convolve(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  const std::size_t n = a.size(), m = b.size();
  if (n == 0 || m == 0) throw Error("convolve: empty input");
  // Taps of b at or beyond n never reach the output.
  const std::size_t mu = std::min(m, n);
  const std::size_t nfft = next_power_of_two(n + mu);
  const auto& plan = fft_plan<T>(nfft);
  auto to_spectrum = [&](const std::vector<T>& v, std::size_t count) {
    std::vector<std::complex<T>> buf(nfft);
    for (std::size_t i = 0; i < count; ++i) buf[i] = v[i];
    plan.forward(buf);
    return buf;
  };
  auto fa = to_spectrum(a.value().values, n);
  const auto fb = to_spectrum(b.value().values, mu);
  for (std::size_t i = 0; i < nfft; ++i) fa[i] *= fb[i];
  plan.inverse_unscaled(fa);
  Tensor<T> out({n});
  const T inv = T(1) / static_cast<T>(nfft);
  for (std::size_t i = 0; i < n; ++i) out[i] = fa[i].real() * inv;
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {ai, bi}, [ai, bi, n, mu, nfft](Tape<T>& tp, std::size_t self) {
    const auto& plan = fft_plan<T>(nfft);
    const T inv = T(1) / static_cast<T>(nfft);
    std::vector<std::complex<T>> gs(nfft);
    const auto& g = tp.grad(self);
    for (std::size_t i = 0; i < n; ++i) gs[i] = g[i];
    plan.forward(gs);
    // Correlation with the other operand: grad_a[i] = sum_k g[i+k] b[k].
    auto correlate = [&](std::size_t other, std::size_t other_len, std::size_t dst, std::size_t dst_len) {
      std::vector<std::complex<T>> buf(nfft);
      const auto& ov = tp.value(other).values;
      for (std::size_t i = 0; i < other_len; ++i) buf[i] = ov[i];
      plan.forward(buf);
      for (std::size_t i = 0; i < nfft; ++i) buf[i] = gs[i] * std::conj(buf[i]);
      plan.inverse_unscaled(buf);
      auto& gd = tp.grad(dst);
      for (std::size_t i = 0; i < dst_len; ++i) gd[i] += buf[i].real() * inv;
    };
    if (tp.requires_grad(ai)) correlate(bi, mu, ai, n);
    if (tp.requires_grad(bi)) correlate(ai, n, bi, mu);
  });
}

/// GRU recurrence over time with zero initial state. `xproj` [T x 3H] holds
/// the input projections (x W_x + b_x) in gate order (reset, update, new);
/// `w_h` is [H x 3H], `b_h` [3H].
///   r = sigmoid(xr + h W_hr + b_hr)
///   z = sigmoid(xz + h W_hz + b_hz)
///   n = tanh(xn + r * (h W_hn + b_hn))
///   h' = (1 - z) * n + z * h
template <class T>
Var<T> gru_recurrence(const Var<T>& xproj, const Var<T>& w_h, const Var<T>& b_h) {
  detail::require_same_tape(xproj, w_h);
  detail::require_same_tape(xproj, b_h);
  detail::require_matrix("gru_recurrence", xproj);
  detail::require_matrix("gru_recurrence", w_h);
  const std::size_t steps = xproj.rows(), h3 = xproj.cols(), hid = h3 / 3;
  if (h3 % 3 != 0 || w_h.rows() != hid || w_h.cols() != h3 || b_h.size() != h3)
    throw ShapeError("gru_recurrence: inconsistent shapes " + shape_str(xproj.shape()) + ", " + shape_str(w_h.shape()) +
                     ", " + shape_str(b_h.shape()));
  using detail::ConstMatMap;
  using Vec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  struct Saved {
    std::vector<T> r, z, n, hn;  // [T x H] each
  };
  auto saved = std::make_shared<Saved>();
  saved->r.resize(steps * hid);
  saved->z.resize(steps * hid);
  saved->n.resize(steps * hid);
  saved->hn.resize(steps * hid);
  Tensor<T> out({steps, hid});
  ConstMatMap<T> wh(w_h.value().values.data(), hid, h3);
  Eigen::Map<const Vec> bh(b_h.value().values.data(), h3);
  Vec h = Vec::Zero(hid), gates(h3);
  auto sig = [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); };
  for (std::size_t t = 0; t < steps; ++t) {
    gates.noalias() = h * wh;
    gates += bh;
    const T* xp = xproj.value().values.data() + t * h3;
    for (std::size_t j = 0; j < hid; ++j) {
      const T r = sig(xp[j] + gates[j]);
      const T z = sig(xp[hid + j] + gates[hid + j]);
      const T hn = gates[2 * hid + j];
      const T nn = std::tanh(xp[2 * hid + j] + r * hn);
      saved->r[t * hid + j] = r;
      saved->z[t * hid + j] = z;
      saved->n[t * hid + j] = nn;
      saved->hn[t * hid + j] = hn;
      out.at(t, j) = (T(1) - z) * nn + z * h[j];
    }
    for (std::size_t j = 0; j < hid; ++j) h[j] = out.at(t, j);
  }
  const std::size_t xi = xproj.id(), wi = w_h.id(), bi = b_h.id();
  return xproj.tape().push(std::move(out), {xi, wi, bi}, [xi, wi, bi, steps, hid, h3, saved](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& hs = tp.value(self).values;
    ConstMatMap<T> wh(tp.value(wi).values.data(), hid, h3);
    const bool need_x = tp.requires_grad(xi), need_w = tp.requires_grad(wi), need_b = tp.requires_grad(bi);
    using MatMapT = detail::MatMap<T>;
    Vec dh = Vec::Zero(hid), dgh(h3), hprev(hid);
    for (std::size_t t = steps; t-- > 0;) {
      for (std::size_t j = 0; j < hid; ++j) dh[j] += g[t * hid + j];
      for (std::size_t j = 0; j < hid; ++j) hprev[j] = t == 0 ? T(0) : hs[(t - 1) * hid + j];
      Vec dh_prev(hid);
      for (std::size_t j = 0; j < hid; ++j) {
        const std::size_t idx = t * hid + j;
        const T r = saved->r[idx], z = saved->z[idx], nn = saved->n[idx], hn = saved->hn[idx];
        const T dn = dh[j] * (T(1) - z);
        const T dz = dh[j] * (hprev[j] - nn);
        dh_prev[j] = dh[j] * z;
        const T dan = dn * (T(1) - nn * nn);
        const T dar = dan * hn * r * (T(1) - r);
        const T daz = dz * z * (T(1) - z);
        dgh[j] = dar;
        dgh[hid + j] = daz;
        dgh[2 * hid + j] = dan * r;
        if (need_x) {
          auto& gx = tp.grad(xi);
          gx[t * h3 + j] += dar;
          gx[t * h3 + hid + j] += daz;
          gx[t * h3 + 2 * hid + j] += dan;
        }
      }
      if (need_w) MatMapT(tp.grad(wi).data(), hid, h3).noalias() += hprev.transpose() * dgh;
      if (need_b) {
        auto& gb = tp.grad(bi);
        for (std::size_t j = 0; j < h3; ++j) gb[j] += dgh[j];
      }
      dh.noalias() = dh_prev + dgh * wh.transpose();
    }
  });
}

}  // namespace smsd::ad
