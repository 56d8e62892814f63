#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sslb/errors.hpp"
#include "sslb/tensor.hpp"

namespace sslb {

struct OptimizerConfig {
  double max_lr = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.3;
  double anneal_fraction = 0.7;
  /// Start of the cycle is max_lr / div_factor.
  double div_factor = 25.0;
  /// End of the cycle is max_lr / final_div_factor.
  double final_div_factor = 1e4;

  void validate() const {
    if (!(max_lr > 0.0)) throw ConfigError("max_lr must be > 0");
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (std::abs(warmup_fraction + anneal_fraction - 1.0) > 1e-12 || warmup_fraction < 0.0 ||
        anneal_fraction < 0.0) {
      throw ConfigError("cycle fractions must be nonnegative and sum to 1");
    }
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  }
};

/// Cosine warm-up from max_lr/div_factor to max_lr over the first
/// warmup_fraction of the steps, then cosine annealing to
/// max_lr/final_div_factor.
inline double one_cycle_lr(std::size_t step, const OptimizerConfig& config) {
  if (step > config.total_steps) {
    throw ContractError("one_cycle_lr: step " + std::to_string(step) + " beyond " +
                        std::to_string(config.total_steps));
  }
  const double peak = config.max_lr;
  const double start = peak / config.div_factor;
  const double end = peak / config.final_div_factor;
  const double warmup = config.warmup_fraction * static_cast<double>(config.total_steps);
  const double s = static_cast<double>(step);
  constexpr double pi = std::numbers::pi;
  if (s < warmup) {
    return peak - (peak - start) * 0.5 * (1.0 + std::cos(pi * s / warmup));
  }
  const double span = static_cast<double>(config.total_steps) - warmup;
  if (span <= 0.0) return peak;
  const double progress = (s - warmup) / span;
  return peak - (peak - end) * 0.5 * (1.0 - std::cos(pi * progress));
}

/// Per-parameter Adam moments plus the step counter.
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

/// One Adam update with decoupled weight decay:
///   θ ← θ − lr·(m̂/(√v̂ + ε) + weight_decay·θ).
/// Tensors without a gradient buffer are treated as having zero gradient.
inline void adam_step(std::span<Tensor> params, OptimizerState& state, double lr,
                      const OptimizerConfig& config) {
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: optimizer state built for a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].has_grad()) {
      for (double g : params[i].grad()) {
        if (!std::isfinite(g)) {
          throw NumericError("non-finite gradient at optimizer step " + std::to_string(state.t));
        }
      }
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size()) throw ContractError("adam_step: moment shape mismatch");
    const bool has_grad = p.has_grad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = has_grad ? p.grad()[j] : 0.0;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] -= lr * (m_hat / (std::sqrt(v_hat) + config.eps) + config.weight_decay * p[j]);
    }
  }
}

}  // namespace sslb
