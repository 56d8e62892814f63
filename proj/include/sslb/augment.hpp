#pragma once

#include <random>
#include <vector>

#include "sslb/errors.hpp"
#include "sslb/rng.hpp"
#include "sslb/tensor.hpp"

namespace sslb {

/// Horizontal flip followed by a counter-clockwise rotation of
/// quarter_turns × 90°. Every spec is a permutation of the pixel grid.
struct TransformSpec {
  bool horizontal_flip = false;
  int quarter_turns = 0;  // 0..3

  bool operator==(const TransformSpec&) const = default;
};

inline TransformSpec identity_transform() { return {}; }

inline TransformSpec inverse(const TransformSpec& spec) {
  // A flip followed by any rotation is a reflection, hence its own inverse.
  if (spec.horizontal_flip) return spec;
  return {false, (4 - spec.quarter_turns) % 4};
}

inline TransformSpec sample_transform(Rng& rng) {
  TransformSpec spec;
  spec.horizontal_flip = std::bernoulli_distribution(0.5)(rng);
  spec.quarter_turns = std::uniform_int_distribution<int>(0, 3)(rng);
  return spec;
}

/// Applies `spec` to a [channels, s, s] image.
inline Tensor apply_transform(const TransformSpec& spec, const Tensor& image) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw DimensionError("apply_transform needs a square [c,s,s] image, got " +
                         shape_string(image.shape()));
  }
  if (spec.quarter_turns < 0 || spec.quarter_turns > 3) {
    throw ContractError("quarter_turns must be in 0..3");
  }
  const std::size_t ch = image.dim(0), s = image.dim(1);
  Tensor out = Tensor::zeros(image.shape());
  for (std::size_t c = 0; c < ch; ++c) {
    const double* src = image.data() + c * s * s;
    double* dst = out.data() + c * s * s;
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t col = 0; col < s; ++col) {
        // Pull each output pixel back through the rotation, then the flip.
        std::size_t sr = r, sc = col;
        for (int q = 0; q < spec.quarter_turns; ++q) {
          const std::size_t nr = sc, nc = s - 1 - sr;
          sr = nr;
          sc = nc;
        }
        if (spec.horizontal_flip) sc = s - 1 - sc;
        dst[r * s + col] = src[sr * s + sc];
      }
    }
  }
  return out;
}

inline std::vector<Tensor> k_augmentations(const Tensor& image, std::size_t k, Rng& rng) {
  if (k < 1) throw ConfigError("k_augmentations: K must be >= 1");
  std::vector<Tensor> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(apply_transform(sample_transform(rng), image));
  return out;
}

}  // namespace sslb
