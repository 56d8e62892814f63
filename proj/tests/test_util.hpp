#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sslb/sslb.hpp"

namespace sslb::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("sslb_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// A network small enough for exhaustive finite differences.
inline ModelConfig tiny_config(std::size_t input = 4, std::size_t channels = 2,
                               std::size_t hidden = 3) {
  ModelConfig cfg;
  cfg.input_size = input;
  cfg.conv_stages = {{channels, 3, 2}};
  cfg.hidden_units = hidden;
  return cfg;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> p(n);
  double total = 0.0;
  for (double& v : p) total += (v = u(rng));
  for (double& v : p) v /= total;
  return p;
}

/// Labelled rows drawn from a simplex, or one-hot when `hard`.
inline Tensor random_labels(std::size_t rows, std::size_t classes, std::mt19937_64& rng,
                            bool hard = false) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < rows; ++i) {
    if (hard) {
      out.push_back(one_hot(std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng), classes));
    } else {
      out.push_back(random_simplex(classes, rng));
    }
  }
  return rows_to_tensor(out);
}

/// Random mixed batch for a model taking [*,3,s,s] inputs.
inline MixedBatch random_mixed_batch(std::size_t n_l, std::size_t n_u, std::size_t size,
                                     std::mt19937_64& rng) {
  MixedBatch b;
  b.labelled.images = random_tensor({n_l, 3, size, size}, rng, 0.0, 1.0);
  b.labelled.labels = random_labels(n_l, 2, rng);
  b.unlabelled.images = random_tensor({n_u, 3, size, size}, rng, 0.0, 1.0);
  b.unlabelled.labels = random_labels(n_u, 2, rng);
  return b;
}

}  // namespace sslb::testing
