#pragma once

// Dense primitive ops. Broadcasting is limited to the leading (row)
// dimension: add_bias/mul_row_const broadcast a row vector over rows, and
// scale_rows broadcasts a column vector over columns. Everything else needs
// identical shapes.

#include <algorithm>
#include <cmath>
#include <Eigen/Core>

#include "smsd/ad/tape.hpp"

namespace smsd::ad {

namespace detail {

template <class T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw Error("ops on vars from different tapes");
}

template <class T>
void require_matrix(const char* op, const Var<T>& a) {
  if (a.shape().size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

/// Elementwise unary op whose derivative is a function of (input, output).
template <class T, class F, class D>
Var<T> unary(const Var<T>& x, F f, D df) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value().values;
  for (std::size_t i = 0; i < xv.size(); ++i) out.values[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, df](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    const auto& in = tp.value(xi).values;
    const auto& o = tp.value(self).values;
    auto& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(in[i], o[i]);
  });
}

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMajor<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMajor<T>>;

}  // namespace detail

// --- elementwise binary ----------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {ai, bi}, [ai, bi](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    for (std::size_t in : {ai, bi}) {
      if (!tp.requires_grad(in)) continue;
      auto& gi = tp.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {ai, bi}, [ai, bi](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(ai)) {
      auto& ga = tp.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(bi)) {
      auto& gb = tp.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {ai, bi}, [ai, bi](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(ai).values;
    const auto& bv = tp.value(bi).values;
    if (tp.requires_grad(ai)) {
      auto& ga = tp.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(bi)) {
      auto& gb = tp.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("div", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {ai, bi}, [ai, bi](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& bv = tp.value(bi).values;
    const auto& o = tp.value(self).values;
    if (tp.requires_grad(ai)) {
      auto& ga = tp.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (tp.requires_grad(bi)) {
      auto& gb = tp.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * o[i] / bv[i];
    }
  });
}

// --- scalar affine ---------------------------------------------------------

template <class T>
Var<T> scale(const Var<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// --- elementwise unary -----------------------------------------------------

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(
      x, [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T o) { return o * (T(1) - o); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T o) { return T(1) - o * o; });
}

/// relu'(0) is taken as 0.
template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> exp(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T o) { return o; });
}

template <class T>
Var<T> log(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// x^p for a constant exponent.
template <class T>
Var<T> power(const Var<T>& x, T p) {
  return detail::unary(
      x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return v == T(0) ? (p == T(1) ? T(1) : T(0)) : p * std::pow(v, p - T(1)); });
}

/// |x|; the derivative at 0 is taken as 0.
template <class T>
Var<T> abs(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::abs(v); },
                       [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// --- reductions ------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().values) acc += v;
  const std::size_t xi = x.id();
  return x.tape().push(Tensor<T>::scalar(acc), {xi}, [xi](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const T g = tp.grad(self)[0];
    for (auto& gx : tp.grad(xi)) gx += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// [R x C] -> [R x 1]
template <class T>
Var<T> row_sum(const Var<T>& x) {
  detail::require_matrix("row_sum", x);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor<T> out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    T acc = 0;
    for (std::size_t j = 0; j < c; ++j) acc += x.value().at(i, j);
    out[i] = acc;
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, r, c](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
  });
}

// --- structural ------------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.value().values);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <class T>
Var<T> transpose(const Var<T>& x) {
  detail::require_matrix("transpose", x);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.value().at(i, j);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, r, c](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

/// Concatenates matrices with equal row counts along columns.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    detail::require_matrix("concat", p);
    if (p.rows() != r)
      throw ShapeError("concat: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor<T> out({r, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.value().values.begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  out.values.begin() + static_cast<std::ptrdiff_t>(i * total + off));
    off += c;
  }
  return parts[0].tape().push(std::move(out), ids, [ids, widths, r, total](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t c = widths[k];
      if (tp.requires_grad(ids[k])) {
        auto& gi = tp.grad(ids[k]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += g[i * total + off + j];
      }
      off += c;
    }
  });
}

/// Columns [begin, end) of a matrix.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t begin, std::size_t end) {
  detail::require_matrix("slice", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (begin >= end || end > c)
    throw ShapeError("slice: columns [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                     shape_str(x.shape()));
  const std::size_t w = end - begin;
  Tensor<T> out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = x.value().at(i, begin + j);
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, r, c, w, begin](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += g[i * w + j];
  });
}

/// First `n` elements of a flat tensor, as shape [n].
template <class T>
Var<T> head(const Var<T>& x, std::size_t n) {
  if (n > x.size()) throw ShapeError("head: " + std::to_string(n) + " elements requested from " + shape_str(x.shape()));
  const auto& v = x.value().values;
  Tensor<T> out({n}, std::vector<T>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)));
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, n](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xi);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
  });
}

// --- linear algebra --------------------------------------------------------

/// [M x K] * [K x N]
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  using detail::ConstMatMap;
  using detail::MatMap;
  Tensor<T> out({m, n});
  MatMap<T>(out.values.data(), m, n).noalias() =
      ConstMatMap<T>(a.value().values.data(), m, k) * ConstMatMap<T>(b.value().values.data(), k, n);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {ai, bi}, [ai, bi, m, k, n](Tape<T>& tp, std::size_t self) {
    ConstMatMap<T> g(tp.grad(self).data(), m, n);
    if (tp.requires_grad(ai))
      MatMap<T>(tp.grad(ai).data(), m, k).noalias() += g * ConstMatMap<T>(tp.value(bi).values.data(), k, n).transpose();
    if (tp.requires_grad(bi))
      MatMap<T>(tp.grad(bi).data(), k, n).noalias() += ConstMatMap<T>(tp.value(ai).values.data(), m, k).transpose() * g;
  });
}

/// x [R x C] + b [C] (or [1 x C]) broadcast over rows.
template <class T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  detail::require_same_tape(x, b);
  detail::require_matrix("add_bias", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (b.size() != c) throw ShapeError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.value().at(i, j) + b.value()[j];
  const std::size_t xi = x.id(), bi = b.id();
  return x.tape().push(std::move(out), {xi, bi}, [xi, bi, r, c](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(xi)) {
      auto& gx = tp.grad(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(bi)) {
      auto& gb = tp.grad(bi);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

/// x [R x C] * g [C] broadcast over rows.
template <class T>
Var<T> mul_row(const Var<T>& x, const Var<T>& gain) {
  detail::require_same_tape(x, gain);
  detail::require_matrix("mul_row", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c)
    throw ShapeError("mul_row: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(gain.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.value().at(i, j) * gain.value()[j];
  const std::size_t xi = x.id(), gi = gain.id();
  return x.tape().push(std::move(out), {xi, gi}, [xi, gi, r, c](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(xi)) {
      auto& gx = tp.grad(xi);
      const auto& gv = tp.value(gi).values;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * gv[j];
    }
    if (tp.requires_grad(gi)) {
      auto& gg = tp.grad(gi);
      const auto& xv = tp.value(xi).values;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xv[i * c + j];
    }
  });
}

/// x [R x C] * s [R x 1] broadcast over columns.
template <class T>
Var<T> scale_rows(const Var<T>& x, const Var<T>& s) {
  detail::require_same_tape(x, s);
  detail::require_matrix("scale_rows", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (s.size() != r) throw ShapeError("scale_rows: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(s.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.value().at(i, j) * s.value()[i];
  const std::size_t xi = x.id(), si = s.id();
  return x.tape().push(std::move(out), {xi, si}, [xi, si, r, c](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(xi)) {
      auto& gx = tp.grad(xi);
      const auto& sv = tp.value(si).values;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * sv[i];
    }
    if (tp.requires_grad(si)) {
      auto& gs = tp.grad(si);
      const auto& xv = tp.value(xi).values;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gs[i] += g[i * c + j] * xv[i * c + j];
    }
  });
}

/// Row-wise normalization to zero mean and unit variance (no affine).
template <class T>
Var<T> layer_norm(const Var<T>& x, T eps = T(1e-5)) {
  detail::require_matrix("layer_norm", x);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += x.value().at(i, j);
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T d = x.value().at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = (x.value().at(i, j) - mu) * inv_std[i];
  }
  const std::size_t xi = x.id();
  return x.tape().push(std::move(out), {xi}, [xi, r, c, inv_std = std::move(inv_std)](Tape<T>& tp, std::size_t self) {
    if (!tp.requires_grad(xi)) return;
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self).values;
    auto& gx = tp.grad(xi);
    for (std::size_t i = 0; i < r; ++i) {
      T g_mean = 0, gy_mean = 0;
      for (std::size_t j = 0; j < c; ++j) {
        g_mean += g[i * c + j];
        gy_mean += g[i * c + j] * y[i * c + j];
      }
      g_mean /= static_cast<T>(c);
      gy_mean /= static_cast<T>(c);
      for (std::size_t j = 0; j < c; ++j)
        gx[i * c + j] += inv_std[i] * (g[i * c + j] - g_mean - y[i * c + j] * gy_mean);
    }
  });
}

}  // namespace smsd::ad
