#pragma once

// Differentiable operations. Every op takes an optional Tape; when a tape is
// given and any input requires a gradient, the op records its backward rule.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sslb/errors.hpp"
#include "sslb/tensor.hpp"

namespace sslb::ops {

/// Lower clamp applied to predictions before taking a logarithm.
inline constexpr double kLogClamp = 1e-12;

namespace detail {

inline bool tracks(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op,
                         const char* arg) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + arg + " must have rank " +
                         std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  if (detail::tracks(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  if (detail::tracks(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double factor, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  if (detail::tracks(tape, {&a})) {
    out.set_requires_grad(true);
    tape->record({a}, out, [a, out, factor]() mutable {
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

/// Sum of all elements as a rank-0 tensor.
inline Tensor sum(const Tensor& a, Tape* tape = nullptr) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor out = Tensor::scalar(total);
  if (detail::tracks(tape, {&a})) {
    out.set_requires_grad(true);
    tape->record({a}, out, [a, out]() mutable {
      const double g = out.grad()[0];
      for (double& ga : a.ensure_grad()) ga += g;
    });
  }
  return out;
}

/// x[batch,in] · W[in,out] + b[out].
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b,
                    Tape* tape = nullptr) {
  detail::require_rank(x, 2, "dense", "x");
  detail::require_rank(w, 2, "dense", "W");
  detail::require_rank(b, 1, "dense", "b");
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in || b.dim(0) != out_dim) {
    throw DimensionError("dense: x " + shape_string(x.shape()) + ", W " +
                         shape_string(w.shape()) + ", b " +
                         shape_string(b.shape()) + " do not conform");
  }
  Tensor out = Tensor::zeros({batch, out_dim});
  for (std::size_t i = 0; i < batch; ++i) {
    double* row = out.data() + i * out_dim;
    for (std::size_t j = 0; j < out_dim; ++j) row[j] = b[j];
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = x[i * in + k];
      const double* wrow = w.data() + k * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) row[j] += xv * wrow[j];
    }
  }
  if (detail::tracks(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    tape->record({x, w, b}, out, [x, w, b, out, batch, in, out_dim]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
          for (std::size_t k = 0; k < in; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < out_dim; ++j) {
              acc += g[i * out_dim + j] * w[k * out_dim + j];
            }
            gx[i * in + k] += acc;
          }
        }
      }
      if (w.requires_grad()) {
        auto gw = w.ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
          for (std::size_t k = 0; k < in; ++k) {
            const double xv = x[i * in + k];
            for (std::size_t j = 0; j < out_dim; ++j) {
              gw[k * out_dim + j] += xv * g[i * out_dim + j];
            }
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
          for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
        }
      }
    });
  }
  return out;
}

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                                      std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

/// Cross-correlation of x[batch,ch,h,w] with kernels[out,ch,kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride,
                     std::size_t padding, Tape* tape = nullptr) {
  detail::require_rank(x, 4, "conv2d", "x");
  detail::require_rank(kernels, 4, "conv2d", "kernels");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oc = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != ch) {
    throw DimensionError("conv2d: input has " + std::to_string(ch) +
                         " channels, kernels " + shape_string(kernels.shape()));
  }
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(kernels.shape()) +
                         " larger than padded input " + shape_string(x.shape()) +
                         " with padding " + std::to_string(padding));
  }
  const std::size_t oh = conv_output_extent(h, kh, stride, padding);
  const std::size_t ow = conv_output_extent(w, kw, stride, padding);
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto sh = static_cast<std::ptrdiff_t>(h), sw = static_cast<std::ptrdiff_t>(w);

  // Visits every (output, input, kernel) triple that falls inside the input.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t x_base = (n * ch + c) * h * w;
          const std::size_t k_base = (o * ch + c) * kh * kw;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= sh) continue;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t out_idx = ((n * oc + o) * oh + oy) * ow + ox;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                  if (ix < 0 || ix >= sw) continue;
                  fn(out_idx, x_base + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix),
                     k_base + ky * kw + kx);
                }
              }
            }
          }
        }
      }
    }
  };

  Tensor out = Tensor::zeros({batch, oc, oh, ow});
  {
    double* po = out.data();
    const double* px = x.data();
    const double* pk = kernels.data();
    for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t ki) {
      po[oi] += px[xi] * pk[ki];
    });
  }
  if (detail::tracks(tape, {&x, &kernels})) {
    out.set_requires_grad(true);
    tape->record({x, kernels}, out, [x, kernels, out, for_each_tap]() mutable {
      const double* g = out.grad().data();
      const bool want_x = x.requires_grad(), want_k = kernels.requires_grad();
      double* gx = want_x ? x.ensure_grad().data() : nullptr;
      double* gk = want_k ? kernels.ensure_grad().data() : nullptr;
      const double* px = x.data();
      const double* pk = kernels.data();
      for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t ki) {
        if (want_x) gx[xi] += g[oi] * pk[ki];
        if (want_k) gk[ki] += g[oi] * px[xi];
      });
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x, Tape* tape = nullptr) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (detail::tracks(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  return out;
}

/// Per-channel standardization of x[batch,ch,h,w] with fixed statistics.
/// The statistics are constants of the graph; only x receives a gradient.
inline Tensor normalize_channels(const Tensor& x, std::span<const double> mean,
                                 std::span<const double> var, double eps,
                                 Tape* tape = nullptr) {
  detail::require_rank(x, 4, "normalize_channels", "x");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (mean.size() != ch || var.size() != ch) {
    throw DimensionError("normalize_channels: " + std::to_string(ch) +
                         " channels but statistics of length " +
                         std::to_string(mean.size()));
  }
  std::vector<double> inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  std::vector<double> centre(mean.begin(), mean.end());
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[base + i] = (x[base + i] - centre[c]) * inv_std[c];
      }
    }
  }
  if (detail::tracks(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, inv_std, batch, ch, plane]() mutable {
      auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t base = (n * ch + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) gx[base + i] += g[base + i] * inv_std[c];
        }
      }
    });
  }
  return out;
}

/// y = scale[c]·x + shift[c] over x[batch,ch,h,w].
inline Tensor channel_affine(const Tensor& x, const Tensor& scale_t,
                             const Tensor& shift, Tape* tape = nullptr) {
  detail::require_rank(x, 4, "channel_affine", "x");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (scale_t.size() != ch || shift.size() != ch) {
    throw DimensionError("channel_affine: " + std::to_string(ch) +
                         " channels, scale " + shape_string(scale_t.shape()) +
                         ", shift " + shape_string(shift.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[base + i] = scale_t[c] * x[base + i] + shift[c];
      }
    }
  }
  if (detail::tracks(tape, {&x, &scale_t, &shift})) {
    out.set_requires_grad(true);
    tape->record({x, scale_t, shift}, out,
                 [x, scale_t, shift, out, batch, ch, plane]() mutable {
      auto g = out.grad();
      const bool want_x = x.requires_grad();
      const bool want_s = scale_t.requires_grad();
      const bool want_b = shift.requires_grad();
      std::span<double> gx, gs, gb;
      if (want_x) gx = x.ensure_grad();
      if (want_s) gs = scale_t.ensure_grad();
      if (want_b) gb = shift.ensure_grad();
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t base = (n * ch + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double gi = g[base + i];
            if (want_x) gx[base + i] += gi * scale_t[c];
            if (want_s) gs[c] += gi * x[base + i];
            if (want_b) gb[c] += gi;
          }
        }
      }
    });
  }
  return out;
}

/// Mean over the spatial axes: x[batch,ch,h,w] -> [batch,ch].
inline Tensor global_avg_pool(const Tensor& x, Tape* tape = nullptr) {
  detail::require_rank(x, 4, "global_avg_pool", "x");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const double inv = 1.0 / static_cast<double>(plane);
  Tensor out = Tensor::zeros({batch, ch});
  for (std::size_t r = 0; r < batch * ch; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += x[r * plane + i];
    out[r] = acc * inv;
  }
  if (detail::tracks(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, batch, ch, plane, inv]() mutable {
      auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t r = 0; r < batch * ch; ++r) {
        const double gr = g[r] * inv;
        for (std::size_t i = 0; i < plane; ++i) gx[r * plane + i] += gr;
      }
    });
  }
  return out;
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax(const Tensor& logits, Tape* tape = nullptr) {
  detail::require_rank(logits, 2, "softmax", "logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (classes < 2) throw DimensionError("softmax: need at least 2 classes");
  Tensor out = Tensor::zeros(logits.shape());
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = logits.data() + i * classes;
    double* orow = out.data() + i * classes;
    const double peak = *std::max_element(row, row + classes);
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      orow[k] = std::exp(row[k] - peak);
      total += orow[k];
    }
    for (std::size_t k = 0; k < classes; ++k) orow[k] /= total;
  }
  if (detail::tracks(tape, {&logits})) {
    out.set_requires_grad(true);
    tape->record({logits}, out, [logits, out, batch, classes]() mutable {
      auto g = out.grad();
      auto gl = logits.ensure_grad();
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t base = i * classes;
        double dot = 0.0;
        for (std::size_t k = 0; k < classes; ++k) dot += g[base + k] * out[base + k];
        for (std::size_t k = 0; k < classes; ++k) {
          gl[base + k] += out[base + k] * (g[base + k] - dot);
        }
      }
    });
  }
  return out;
}

/// Rows [begin, end) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end,
                         Tape* tape = nullptr) {
  detail::require_rank(x, 2, "slice_rows", "x");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " +
                         shape_string(x.shape()));
  }
  const std::size_t cols = x.dim(1);
  std::vector<double> vals(x.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                           x.values().begin() + static_cast<std::ptrdiff_t>(end * cols));
  Tensor out({end - begin, cols}, std::move(vals));
  if (detail::tracks(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, begin, cols]() mutable {
      auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
    });
  }
  return out;
}

/// Multiplies row i of x[batch,C] by weights[i].
inline Tensor scale_rows(const Tensor& x, std::span<const double> weights,
                         Tape* tape = nullptr) {
  detail::require_rank(x, 2, "scale_rows", "x");
  const std::size_t batch = x.dim(0), cols = x.dim(1);
  if (weights.size() != batch) {
    throw DimensionError("scale_rows: " + std::to_string(weights.size()) +
                         " weights for " + shape_string(x.shape()));
  }
  std::vector<double> w(weights.begin(), weights.end());
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t k = 0; k < cols; ++k) out[i * cols + k] = w[i] * x[i * cols + k];
  }
  if (detail::tracks(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, w, cols]() mutable {
      auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += w[i / cols] * g[i];
    });
  }
  return out;
}

/// Mean over rows of w_i · (−Σ_k target_ik · log(clamp(pred_ik))).
/// An empty weight span means all weights are one.
inline Tensor cross_entropy(const Tensor& target, const Tensor& pred,
                            std::span<const double> row_weights = {},
                            Tape* tape = nullptr) {
  detail::require_rank(pred, 2, "cross_entropy", "pred");
  detail::require_same_shape(target, pred, "cross_entropy");
  const std::size_t batch = pred.dim(0), classes = pred.dim(1);
  if (!row_weights.empty() && row_weights.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(row_weights.size()) +
                         " row weights for batch of " + std::to_string(batch));
  }
  std::vector<double> w(batch, 1.0);
  if (!row_weights.empty()) w.assign(row_weights.begin(), row_weights.end());
  const double inv_batch = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    double row = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::clamp(pred[i * classes + k], kLogClamp, 1.0);
      row -= target[i * classes + k] * std::log(p);
    }
    total += w[i] * row;
  }
  Tensor out = Tensor::scalar(total * inv_batch);
  if (detail::tracks(tape, {&target, &pred})) {
    out.set_requires_grad(true);
    tape->record({target, pred}, out, [target, pred, out, w, classes, inv_batch]() mutable {
      const double g = out.grad()[0] * inv_batch;
      const bool want_t = target.requires_grad(), want_p = pred.requires_grad();
      std::span<double> gt, gp;
      if (want_t) gt = target.ensure_grad();
      if (want_p) gp = pred.ensure_grad();
      for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        const double wi = w[idx / classes];
        const double raw = pred[idx];
        const double p = std::clamp(raw, kLogClamp, 1.0);
        if (want_t) gt[idx] -= g * wi * std::log(p);
        if (want_p && raw > kLogClamp && raw <= 1.0) {
          gp[idx] -= g * wi * target[idx] / p;
        }
      }
    });
  }
  return out;
}

/// Mean over rows of w_i · ||target_i − pred_i||².
inline Tensor mse_distance(const Tensor& target, const Tensor& pred,
                           std::span<const double> row_weights = {},
                           Tape* tape = nullptr) {
  detail::require_same_shape(target, pred, "mse_distance");
  detail::require_rank(pred, 2, "mse_distance", "pred");
  const std::size_t batch = pred.dim(0), classes = pred.dim(1);
  if (!row_weights.empty() && row_weights.size() != batch) {
    throw DimensionError("mse_distance: " + std::to_string(row_weights.size()) +
                         " row weights for batch of " + std::to_string(batch));
  }
  std::vector<double> w(batch, 1.0);
  if (!row_weights.empty()) w.assign(row_weights.begin(), row_weights.end());
  const double inv_batch = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    double row = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double d = target[i * classes + k] - pred[i * classes + k];
      row += d * d;
    }
    total += w[i] * row;
  }
  Tensor out = Tensor::scalar(total * inv_batch);
  if (detail::tracks(tape, {&target, &pred})) {
    out.set_requires_grad(true);
    tape->record({target, pred}, out, [target, pred, out, w, classes, inv_batch]() mutable {
      const double g = out.grad()[0] * inv_batch;
      const bool want_t = target.requires_grad(), want_p = pred.requires_grad();
      std::span<double> gt, gp;
      if (want_t) gt = target.ensure_grad();
      if (want_p) gp = pred.ensure_grad();
      for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        const double d = 2.0 * w[idx / classes] * (target[idx] - pred[idx]) * g;
        if (want_t) gt[idx] += d;
        if (want_p) gp[idx] -= d;
      }
    });
  }
  return out;
}

}  // namespace sslb::ops
