#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "sslb/errors.hpp"
#include "sslb/tensor.hpp"

namespace sslb {

/// A scalar-valued computation. It must record onto the given tape when one
/// is passed and must be deterministic.
using ScalarFn = std::function<Tensor(Tape*)>;

/// |a − b| / max(|a|, |b|, 1e-8).
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares reverse-mode gradients of `fn` against central differences for
/// every coordinate of every tensor in `wrt`. Returns the largest relative
/// error. Tensor values are restored before returning.
inline double gradient_check(const ScalarFn& fn, std::span<Tensor> wrt,
                             double step) {
  if (!(step > 0.0)) throw ContractError("gradient_check: step must be > 0");
  Tape tape;
  Tensor loss = fn(&tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (Tensor& t : wrt) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.size(), 0.0);
    }
  }

  double worst = 0.0;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor& t = wrt[ti];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = fn(nullptr).item();
      t[i] = saved - step;
      const double down = fn(nullptr).item();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic[ti][i], numeric));
    }
  }
  return worst;
}

inline double finite_difference_check(const ScalarFn& fn, Tensor x,
                                      double step) {
  return gradient_check(fn, std::span<Tensor>(&x, 1), step);
}

}  // namespace sslb
