#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "sslb/augment.hpp"
#include "sslb/errors.hpp"
#include "sslb/model.hpp"
#include "sslb/ops.hpp"
#include "sslb/rng.hpp"
#include "sslb/tensor.hpp"

namespace sslb {

struct MixMatchConfig {
  std::size_t k = 2;
  double temperature = 0.5;
  double alpha = 0.75;
  double gamma = 100.0;
  double rampup_horizon = 3000.0;

  void validate() const {
    if (k < 1) throw ConfigError("K must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(rampup_horizon > 0.0)) throw ConfigError("rampup horizon must be > 0");
  }
};

/// Images [n,c,s,s] with one probability row per image in labels [n,C].
struct SoftBatch {
  Tensor images;
  Tensor labels;

  std::size_t size() const { return images.defined() ? images.dim(0) : 0; }
};

struct MixedBatch {
  SoftBatch labelled;
  SoftBatch unlabelled;
};

// ---------------------------------------------------------------------------
// batch helpers

inline Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw ContractError("stack_images: empty list");
  const Shape& item = images.front().shape();
  Shape shape{images.size()};
  shape.insert(shape.end(), item.begin(), item.end());
  std::vector<double> values;
  values.reserve(shape_size(shape));
  for (const Tensor& img : images) {
    if (img.shape() != item) {
      throw DimensionError("stack_images: mixed shapes " + shape_string(item) +
                           " and " + shape_string(img.shape()));
    }
    values.insert(values.end(), img.values().begin(), img.values().end());
  }
  return Tensor(std::move(shape), std::move(values));
}

/// Element `i` of a batch tensor, without the leading axis.
inline Tensor batch_item(const Tensor& batch, std::size_t i) {
  Shape item(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = shape_size(item);
  std::vector<double> values(batch.values().begin() + static_cast<std::ptrdiff_t>(i * n),
                             batch.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  return Tensor(std::move(item), std::move(values));
}

inline Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("rows_to_tensor: empty list");
  std::vector<double> values;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw DimensionError("ragged label rows");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows.front().size()}, std::move(values));
}

inline std::vector<double> tensor_row(const Tensor& t, std::size_t i) {
  const std::size_t cols = t.dim(1);
  return {t.values().begin() + static_cast<std::ptrdiff_t>(i * cols),
          t.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * cols)};
}

inline std::vector<double> one_hot(std::size_t cls, std::size_t classes) {
  std::vector<double> row(classes, 0.0);
  row.at(cls) = 1.0;
  return row;
}

// ---------------------------------------------------------------------------
// pseudo-labels and sharpening

/// Maps a batch [n,c,s,s] to probability rows [n,C].
using Predictor = std::function<Tensor(const Tensor&)>;

/// Average prediction over K sampled transforms of each image in
/// images[n,c,s,s]; one row per image. All n·K views go through `predict`
/// as one batch. The transformed views are returned through `augmented`
/// (image j, transform η at j·K + η) when requested.
inline std::vector<std::vector<double>> pseudo_labels(const Predictor& predict,
                                                      const Tensor& images, std::size_t k,
                                                      Rng& rng,
                                                      std::vector<Tensor>* augmented = nullptr) {
  if (k < 1) throw ConfigError("pseudo_label: K must be >= 1");
  const std::size_t n = images.dim(0);
  std::vector<Tensor> views;
  views.reserve(n * k);
  for (std::size_t j = 0; j < n; ++j) {
    Tensor img = batch_item(images, j);
    for (std::size_t e = 0; e < k; ++e) views.push_back(apply_transform(sample_transform(rng), img));
  }
  Tensor probs = predict(stack_images(views));
  if (probs.rank() != 2 || probs.dim(0) != n * k) {
    throw DimensionError("pseudo_labels: predictor returned " + shape_string(probs.shape()) +
                         " for " + std::to_string(n * k) + " views");
  }
  const std::size_t classes = probs.dim(1);
  std::vector<std::vector<double>> out(n, std::vector<double>(classes, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t e = 0; e < k; ++e) {
      for (std::size_t c = 0; c < classes; ++c) out[j][c] += probs[(j * k + e) * classes + c];
    }
    for (double& v : out[j]) v /= static_cast<double>(k);
  }
  if (augmented != nullptr) *augmented = std::move(views);
  return out;
}

/// Model version: no tape, frozen normalization.
inline std::vector<std::vector<double>> pseudo_labels(const ModelParams& params,
                                                      const Tensor& images, std::size_t k,
                                                      Rng& rng,
                                                      std::vector<Tensor>* augmented = nullptr) {
  return pseudo_labels([&params](const Tensor& x) { return model_forward(params, x); }, images, k,
                       rng, augmented);
}

/// Pseudo-label of a single [c,s,s] image.
inline std::vector<double> pseudo_label(const ModelParams& params, const Tensor& image,
                                        std::size_t k, Rng& rng) {
  Tensor batch = image.reshaped([&] {
    Shape s{1};
    s.insert(s.end(), image.shape().begin(), image.shape().end());
    return s;
  }());
  return pseudo_labels(params, batch, k, rng).front();
}

/// y_i^(1/T) / Σ_j y_j^(1/T), evaluated in log space so small temperatures
/// do not underflow.
inline std::vector<double> sharpen(std::span<const double> y, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("sharpen: temperature must be > 0");
  const double peak = y.empty() ? 0.0 : *std::max_element(y.begin(), y.end());
  if (!(peak > 0.0)) throw ContractError("sharpen: input has no positive entry");
  std::vector<double> out(y.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) {
      out[i] = std::exp((std::log(y[i]) - std::log(peak)) / temperature);
      total += out[i];
    }
  }
  for (double& v : out) v /= total;
  return out;
}

// ---------------------------------------------------------------------------
// MixUp

inline double sample_beta(double a, double b, Rng& rng) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

/// max(λ, 1 − λ) for λ ~ Beta(α, α).
inline double mixup_weight(double lambda) { return std::max(lambda, 1.0 - lambda); }

inline double sample_mixup_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ContractError("MixUp alpha must be > 0");
  return mixup_weight(sample_beta(alpha, alpha, rng));
}

struct MixedPair {
  Tensor image;
  std::vector<double> label;
};

/// λ'·a + (1 − λ')·b for both image and label.
inline MixedPair mixup_pair(const Tensor& image_a, std::span<const double> label_a,
                            const Tensor& image_b, std::span<const double> label_b,
                            double lambda) {
  if (image_a.shape() != image_b.shape() || label_a.size() != label_b.size()) {
    throw DimensionError("mixup_pair: shapes " + shape_string(image_a.shape()) + " and " +
                         shape_string(image_b.shape()) + " differ");
  }
  if (!(lambda >= 0.5 && lambda <= 1.0)) throw ContractError("mixup_pair: λ' outside [0.5,1]");
  const double rest = 1.0 - lambda;
  Tensor image = Tensor::zeros(image_a.shape());
  for (std::size_t i = 0; i < image.size(); ++i) image[i] = lambda * image_a[i] + rest * image_b[i];
  std::vector<double> label(label_a.size());
  for (std::size_t i = 0; i < label.size(); ++i) label[i] = lambda * label_a[i] + rest * label_b[i];
  return {std::move(image), std::move(label)};
}

// ---------------------------------------------------------------------------
// batch construction

/// Builds (S'_l, S̃'_u) from a labelled batch (images with probability rows)
/// and an unlabelled image batch:
///   1. each unlabelled image gets K transformed views sharing one sharpened
///      pseudo-label; each labelled image gets one transformed view;
///   2. all views are concatenated and shuffled into a partner pool;
///   3. entry i of the concatenation is mixed with pool entry i using a fresh
///      λ' ≥ 0.5, so the mix stays dominated by its originating entry.
inline MixedBatch build_mixed_batch(const ModelParams& params, const SoftBatch& labelled,
                                    const Tensor& unlabelled_images,
                                    const MixMatchConfig& config, Rng& rng) {
  config.validate();
  if (labelled.size() == 0 || !unlabelled_images.defined() || unlabelled_images.dim(0) == 0) {
    throw ContractError("build_mixed_batch: empty batch");
  }
  const std::size_t n_l = labelled.size();
  const std::size_t n_u = unlabelled_images.dim(0);

  std::vector<Tensor> views;
  std::vector<std::vector<double>> targets;
  views.reserve(n_l + config.k * n_u);
  for (std::size_t i = 0; i < n_l; ++i) {
    views.push_back(apply_transform(sample_transform(rng), batch_item(labelled.images, i)));
    targets.push_back(tensor_row(labelled.labels, i));
  }
  std::vector<Tensor> u_views;
  auto guesses = pseudo_labels(params, unlabelled_images, config.k, rng, &u_views);
  for (std::size_t j = 0; j < n_u; ++j) {
    auto sharp = sharpen(guesses[j], config.temperature);
    for (std::size_t e = 0; e < config.k; ++e) {
      views.push_back(u_views[j * config.k + e]);
      targets.push_back(sharp);
    }
  }

  std::vector<std::size_t> pool(views.size());
  std::iota(pool.begin(), pool.end(), 0);
  std::shuffle(pool.begin(), pool.end(), rng);

  std::vector<Tensor> mixed_images;
  std::vector<std::vector<double>> mixed_labels;
  mixed_images.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const double lambda = sample_mixup_lambda(config.alpha, rng);
    auto mixed = mixup_pair(views[i], targets[i], views[pool[i]], targets[pool[i]], lambda);
    mixed_images.push_back(std::move(mixed.image));
    mixed_labels.push_back(std::move(mixed.label));
  }

  MixedBatch out;
  std::span<const Tensor> all(mixed_images);
  out.labelled.images = stack_images(all.subspan(0, n_l));
  out.unlabelled.images = stack_images(all.subspan(n_l));
  out.labelled.labels = rows_to_tensor({mixed_labels.begin(), mixed_labels.begin() + static_cast<std::ptrdiff_t>(n_l)});
  out.unlabelled.labels = rows_to_tensor({mixed_labels.begin() + static_cast<std::ptrdiff_t>(n_l), mixed_labels.end()});
  return out;
}

// ---------------------------------------------------------------------------
// objective

/// Linear ramp min(t / horizon, 1) scaling the unlabelled term.
inline double ramp_up(double step, double horizon) {
  if (step < 0.0) throw ContractError("ramp_up: negative step");
  if (!(horizon > 0.0)) throw ContractError("ramp_up: horizon must be > 0");
  return std::min(step / horizon, 1.0);
}

/// Predictions for S'_l and S̃'_u from one forward pass over both parts.
struct MixedPredictions {
  Tensor labelled;
  Tensor unlabelled;
};

inline MixedPredictions predict_mixed(ModelParams& params, const MixedBatch& mixed,
                                      ForwardMode mode, Tape* tape) {
  const std::size_t n_l = mixed.labelled.size(), n_u = mixed.unlabelled.size();
  std::vector<double> values(mixed.labelled.images.values().begin(),
                             mixed.labelled.images.values().end());
  values.insert(values.end(), mixed.unlabelled.images.values().begin(),
                mixed.unlabelled.images.values().end());
  Shape shape = mixed.labelled.images.shape();
  shape[0] = n_l + n_u;
  Tensor probs = model_forward(params, Tensor(std::move(shape), std::move(values)), mode, tape);
  return {ops::slice_rows(probs, 0, n_l, tape), ops::slice_rows(probs, n_l, n_l + n_u, tape)};
}

/// CE(S'_l) + γ·r·MSE(S̃'_u).
inline Tensor mixmatch_loss_unweighted(ModelParams& params, const MixedBatch& mixed,
                                       double gamma, double r, Tape* tape = nullptr,
                                       ForwardMode mode = ForwardMode::kFrozen) {
  if (r < 0.0 || r > 1.0) throw ContractError("mixmatch loss: r outside [0,1]");
  auto pred = predict_mixed(params, mixed, mode, tape);
  Tensor supervised = ops::cross_entropy(mixed.labelled.labels, pred.labelled, {}, tape);
  Tensor consistency = ops::mse_distance(mixed.unlabelled.labels, pred.unlabelled, {}, tape);
  return ops::add(supervised, ops::scale(consistency, gamma * r, tape), tape);
}

}  // namespace sslb
