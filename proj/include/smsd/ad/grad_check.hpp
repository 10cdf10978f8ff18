#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "smsd/ad/tape.hpp"

namespace smsd::ad {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates sampled per parameter (all of them when the tensor is smaller).
  std::size_t coords_per_param = 64;
  std::uint64_t seed = 0;
  /// One-sided differences disagreeing by more than this (relative) mark a kink.
  double kink_tolerance = 0.1;
  /// Denominator floor for relative errors.
  double abs_floor = 1e-8;
};

struct ParamCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates skipped because the function is not differentiable there.
  std::vector<std::size_t> kinks;
};

using GradCheckReport = std::map<std::string, ParamCheck>;

template <class T>
using GraphBuilder = std::function<Var<T>(Tape<T>&, const std::map<std::string, Var<T>>&)>;

template <class T>
T evaluate(const GraphBuilder<T>& build, const TensorMap<T>& params) {
  Tape<T> tape;
  auto vars = bind_parameters(tape, params);
  return build(tape, vars).value()[0];
}

/// Compares the tape gradient of `build` (precision T) against central
/// differences of `oracle` (precision U, e.g. long double to push the
/// finite-difference rounding floor below the tolerance being checked) on a
/// seeded subsample of coordinates of every parameter.
template <class T, class U>
GradCheckReport grad_check(const GraphBuilder<T>& build, const GraphBuilder<U>& oracle, const TensorMap<T>& params,
                           const GradCheckOptions& opts = {}) {
  if (!(opts.eps > 0.0)) throw Error("grad_check: eps must be positive");
  TensorMap<T> analytic;
  {
    Tape<T> tape;
    auto vars = bind_parameters(tape, params);
    analytic = tape.backward(build(tape, vars));
  }
  TensorMap<U> probe;
  for (const auto& [name, t] : params) probe.emplace(name, t.template cast<U>());
  const U f0 = evaluate(oracle, probe);
  std::mt19937_64 rng(opts.seed);
  GradCheckReport report;
  for (auto& [name, tensor] : probe) {
    std::vector<std::size_t> coords(tensor.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opts.coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    ParamCheck check;
    for (std::size_t c : coords) {
      const U orig = tensor[c];
      const U e = static_cast<U>(opts.eps);
      tensor[c] = orig + e;
      const U fp = evaluate(oracle, probe);
      tensor[c] = orig - e;
      const U fm = evaluate(oracle, probe);
      tensor[c] = orig;
      const U step = (orig + e) - (orig - e);
      const double central = static_cast<double>((fp - fm) / step);
      const double right = static_cast<double>((fp - f0) / (step / 2));
      const double left = static_cast<double>((f0 - fm) / (step / 2));
      const double one_sided_gap = std::abs(right - left);
      if (one_sided_gap > opts.kink_tolerance * std::max({std::abs(right), std::abs(left), opts.abs_floor})) {
        check.kinks.push_back(c);
        continue;
      }
      const double a = static_cast<double>(analytic.at(name)[c]);
      const double rel = std::abs(a - central) / std::max({std::abs(a), std::abs(central), opts.abs_floor});
      check.max_rel_error = std::max(check.max_rel_error, rel);
      ++check.checked;
    }
    report.emplace(name, std::move(check));
  }
  return report;
}

template <class T>
GradCheckReport grad_check(const GraphBuilder<T>& build, const TensorMap<T>& params, const GradCheckOptions& opts = {}) {
  return grad_check<T, T>(build, build, params, opts);
}

inline double max_error(const GradCheckReport& report) {
  double m = 0.0;
  for (const auto& [name, c] : report) m = std::max(m, c.max_rel_error);
  return m;
}

}  // namespace smsd::ad
