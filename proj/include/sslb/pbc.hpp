#pragma once

// Pseudo-label based balance correction: per-class weights from inverse
// labelled-class frequencies, selected per observation by the argmax of its
// (mixed or pseudo) label, applied to both MixMatch loss terms.

#include <span>
#include <numeric>
#include <string>
#include <vector>

#include "sslb/errors.hpp"
#include "sslb/mixmatch.hpp"
#include "sslb/ops.hpp"

namespace sslb {

/// Normalized correction coefficients c, one per class, summing to 1.
class ClassWeightVector {
 public:
  ClassWeightVector() = default;
  explicit ClassWeightVector(std::vector<double> c) : c_(std::move(c)) {}

  double operator[](std::size_t cls) const { return c_.at(cls); }
  std::size_t size() const { return c_.size(); }
  std::span<const double> values() const { return c_; }

  static ClassWeightVector uniform(std::size_t classes) {
    return ClassWeightVector(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
  }

 private:
  std::vector<double> c_;
};

/// v_i = 1/n_i, c_i = v_i / Σ_j v_j.
///
/// Counts are first divided by their gcd, so any rescaled count vector
/// reduces to the same integers and gives bit-identical weights. Then
/// c_i = P_i / Σ_k P_k with P_i = Π_{j≠i} n_j.
inline ClassWeightVector class_weights(std::span<const std::size_t> counts) {
  if (counts.size() < 2) throw ConfigError("class_weights: need at least 2 classes");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      throw ConfigError("class_weights: class " + std::to_string(i) +
                        " has no labelled observations");
    }
  }
  std::size_t g = 0;
  for (std::size_t n : counts) g = std::gcd(g, n);
  std::vector<double> c(counts.size(), 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (std::size_t j = 0; j < counts.size(); ++j) {
      if (j != i) c[i] *= static_cast<double>(counts[j] / g);
    }
    total += c[i];
  }
  for (double& v : c) v /= total;
  return ClassWeightVector(std::move(c));
}

inline ClassWeightVector class_weights(std::initializer_list<std::size_t> counts) {
  std::vector<std::size_t> v(counts);
  return class_weights(std::span<const std::size_t>(v));
}

/// Index of the largest entry; ties go to the lower index.
inline std::size_t label_to_index(std::span<const double> y) {
  if (y.empty()) throw ContractError("label_to_index: empty label");
  std::size_t best = 0;
  for (std::size_t k = 1; k < y.size(); ++k) {
    if (y[k] > y[best]) best = k;
  }
  return best;
}

/// c_{b_i} for each row of labels[n,C], optionally squared.
inline std::vector<double> selected_weights(const Tensor& labels, const ClassWeightVector& c,
                                            bool squared = false) {
  const std::size_t n = labels.dim(0), classes = labels.dim(1);
  if (classes != c.size()) {
    throw DimensionError("label width " + std::to_string(classes) + " but " +
                         std::to_string(c.size()) + " class weights");
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ci = c[label_to_index(labels.values().subspan(i * classes, classes))];
    w[i] = squared ? ci * ci : ci;
  }
  return w;
}

/// Mean over rows of c_{b_i}·CE(y_i, pred_i).
inline Tensor weighted_cross_entropy(const Tensor& labels, const Tensor& pred,
                                     const ClassWeightVector& c, Tape* tape = nullptr) {
  auto w = selected_weights(labels, c);
  return ops::cross_entropy(labels, pred, w, tape);
}

/// Reference form CE(c_b·y, c_b·pred) taken literally. Differs from
/// weighted_cross_entropy by −c_b·log(c_b) per row, a constant in the
/// parameters.
inline Tensor literal_weighted_cross_entropy(const Tensor& labels, const Tensor& pred,
                                             const ClassWeightVector& c, Tape* tape = nullptr) {
  auto w = selected_weights(labels, c);
  Tensor scaled_labels = ops::scale_rows(labels, w, tape);
  Tensor scaled_pred = ops::scale_rows(pred, w, tape);
  return ops::cross_entropy(scaled_labels, scaled_pred, {}, tape);
}

/// Mean over rows of ||c_b·(y_j − pred_j)||² = c_b²·||y_j − pred_j||².
inline Tensor weighted_squared_distance(const Tensor& labels, const Tensor& pred,
                                        const ClassWeightVector& c, Tape* tape = nullptr) {
  auto w = selected_weights(labels, c, /*squared=*/true);
  return ops::mse_distance(labels, pred, w, tape);
}

inline Tensor weighted_labeled_loss(ModelParams& params, const SoftBatch& batch,
                                    const ClassWeightVector& c, Tape* tape = nullptr,
                                    ForwardMode mode = ForwardMode::kFrozen) {
  Tensor pred = model_forward(params, batch.images, mode, tape);
  return weighted_cross_entropy(batch.labels, pred, c, tape);
}

inline Tensor weighted_unlabeled_loss(ModelParams& params, const SoftBatch& batch,
                                      const ClassWeightVector& c, Tape* tape = nullptr,
                                      ForwardMode mode = ForwardMode::kFrozen) {
  Tensor pred = model_forward(params, batch.images, mode, tape);
  return weighted_squared_distance(batch.labels, pred, c, tape);
}

/// weighted_labeled_loss + γ·r·weighted_unlabeled_loss over one shared
/// forward pass.
inline Tensor pbc_mixmatch_loss(ModelParams& params, const MixedBatch& mixed,
                                const ClassWeightVector& c, double gamma, double r,
                                Tape* tape = nullptr, ForwardMode mode = ForwardMode::kFrozen) {
  if (r < 0.0 || r > 1.0) throw ContractError("pbc loss: r outside [0,1]");
  auto pred = predict_mixed(params, mixed, mode, tape);
  Tensor supervised = weighted_cross_entropy(mixed.labelled.labels, pred.labelled, c, tape);
  Tensor consistency = weighted_squared_distance(mixed.unlabelled.labels, pred.unlabelled, c, tape);
  return ops::add(supervised, ops::scale(consistency, gamma * r, tape), tape);
}

}  // namespace sslb
