#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sslb/errors.hpp"
#include "sslb/ops.hpp"
#include "sslb/rng.hpp"
#include "sslb/tensor.hpp"

namespace sslb {

struct ConvStage {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

/// Shape of the small CNN classifier: conv stages (each followed by channel
/// normalization, affine, ReLU), global average pooling, an optional hidden
/// dense layer and a softmax head.
struct ModelConfig {
  std::size_t input_size = 32;
  std::size_t channels = 3;
  std::vector<ConvStage> conv_stages{{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
  std::size_t hidden_units = 32;
  std::size_t num_classes = 2;
  /// Standardize conv activations with running statistics.
  bool normalize = true;
  double norm_momentum = 0.1;
  double norm_eps = 1e-5;

  /// Spatial extent after all conv stages; padding is kernel/2.
  long long final_spatial() const {
    long long s = static_cast<long long>(input_size);
    for (const auto& st : conv_stages) {
      const long long pad = static_cast<long long>(st.kernel / 2);
      const long long padded = s + 2 * pad;
      if (st.stride == 0 || static_cast<long long>(st.kernel) > padded) return 0;
      s = (padded - static_cast<long long>(st.kernel)) / static_cast<long long>(st.stride) + 1;
    }
    return s;
  }

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (channels == 0 || input_size == 0) throw ConfigError("empty input geometry");
    for (const auto& st : conv_stages) {
      if (st.out_channels == 0 || st.kernel == 0 || st.stride == 0) {
        throw ConfigError("conv stage with zero channels, kernel or stride");
      }
    }
    if (final_spatial() < 1) {
      throw ConfigError("conv stages reduce input of size " +
                        std::to_string(input_size) + " to nothing");
    }
  }
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Running per-channel statistics of one normalization site.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> var;
};

class ModelParams {
 public:
  ModelConfig config;
  std::vector<NamedTensor> tensors;
  std::vector<NormStats> stats;

  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out;
    out.reserve(tensors.size());
    for (const auto& nt : tensors) out.push_back(nt.tensor);
    return out;
  }

  const Tensor& get(const std::string& name) const {
    for (const auto& nt : tensors) {
      if (nt.name == name) return nt.tensor;
    }
    throw ContractError("no parameter named " + name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& nt : tensors) n += nt.tensor.size();
    return n;
  }

  /// All trainable values concatenated in declaration order.
  std::vector<double> flat_values() const {
    std::vector<double> out;
    for (const auto& nt : tensors) {
      out.insert(out.end(), nt.tensor.values().begin(), nt.tensor.values().end());
    }
    return out;
  }

  ModelParams clone() const {
    ModelParams copy;
    copy.config = config;
    copy.stats = stats;
    for (const auto& nt : tensors) copy.tensors.push_back({nt.name, nt.tensor.clone()});
    return copy;
  }
};

inline ModelParams model_init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, "model-init");
  ModelParams params;
  params.config = config;

  auto he_tensor = [&rng](Shape shape, std::size_t fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.values()) v = dist(rng);
    return t;
  };

  std::size_t in_ch = config.channels;
  for (std::size_t i = 0; i < config.conv_stages.size(); ++i) {
    const auto& st = config.conv_stages[i];
    const std::string idx = std::to_string(i);
    params.tensors.push_back(
        {"conv" + idx + ".weight",
         he_tensor({st.out_channels, in_ch, st.kernel, st.kernel},
                   in_ch * st.kernel * st.kernel)});
    Tensor gain = Tensor::zeros({st.out_channels}, true);
    for (double& v : gain.values()) v = 1.0;
    params.tensors.push_back({"norm" + idx + ".scale", gain});
    params.tensors.push_back({"norm" + idx + ".shift", Tensor::zeros({st.out_channels}, true)});
    params.stats.push_back({std::vector<double>(st.out_channels, 0.0),
                            std::vector<double>(st.out_channels, 1.0)});
    in_ch = st.out_channels;
  }
  std::size_t features = in_ch;
  std::size_t layer = 0;
  if (config.hidden_units > 0) {
    params.tensors.push_back({"fc0.weight", he_tensor({features, config.hidden_units}, features)});
    params.tensors.push_back({"fc0.bias", Tensor::zeros({config.hidden_units}, true)});
    features = config.hidden_units;
    layer = 1;
  }
  const std::string head = "fc" + std::to_string(layer);
  params.tensors.push_back({head + ".weight", he_tensor({features, config.num_classes}, features)});
  params.tensors.push_back({head + ".bias", Tensor::zeros({config.num_classes}, true)});
  return params;
}

enum class ForwardMode {
  /// Normalization statistics are read-only; the forward pass is a pure
  /// function of (params, input).
  kFrozen,
  /// Running statistics absorb the batch moments before normalizing.
  kUpdateStats,
};

namespace detail {
inline void update_running_stats(const Tensor& x, NormStats& stats, double momentum) {
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const double count = static_cast<double>(batch * plane);
  for (std::size_t c = 0; c < ch; ++c) {
    double mean = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* p = x.data() + (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    }
    mean /= count;
    double var = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* p = x.data() + (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    var /= count;
    stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * mean;
    stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * var;
  }
}

inline Tensor forward_impl(const ModelParams& params, std::vector<NormStats>* mutable_stats,
                           const Tensor& x, Tape* tape) {
  const ModelConfig& cfg = params.config;
  if (x.rank() != 4 || x.dim(1) != cfg.channels || x.dim(2) != cfg.input_size ||
      x.dim(3) != cfg.input_size) {
    throw DimensionError("model expects input [batch," + std::to_string(cfg.channels) +
                         "," + std::to_string(cfg.input_size) + "," +
                         std::to_string(cfg.input_size) + "], got " +
                         shape_string(x.shape()));
  }
  Tensor h = x;
  std::size_t t = 0;
  for (std::size_t i = 0; i < cfg.conv_stages.size(); ++i) {
    const auto& st = cfg.conv_stages[i];
    h = ops::conv2d(h, params.tensors[t].tensor, st.stride, st.kernel / 2, tape);
    if (cfg.normalize) {
      if (mutable_stats != nullptr) {
        update_running_stats(h, (*mutable_stats)[i], cfg.norm_momentum);
      }
      const NormStats& s = params.stats[i];
      h = ops::normalize_channels(h, s.mean, s.var, cfg.norm_eps, tape);
    }
    h = ops::channel_affine(h, params.tensors[t + 1].tensor, params.tensors[t + 2].tensor, tape);
    h = ops::relu(h, tape);
    t += 3;
  }
  h = ops::global_avg_pool(h, tape);
  if (cfg.hidden_units > 0) {
    h = ops::dense(h, params.tensors[t].tensor, params.tensors[t + 1].tensor, tape);
    h = ops::relu(h, tape);
    t += 2;
  }
  h = ops::dense(h, params.tensors[t].tensor, params.tensors[t + 1].tensor, tape);
  return ops::softmax(h, tape);
}
}  // namespace detail

/// Class-probability rows for a batch x[batch,channels,s,s]. Records onto
/// `tape` when given.
inline Tensor model_forward(const ModelParams& params, const Tensor& x,
                            Tape* tape = nullptr) {
  return detail::forward_impl(params, nullptr, x, tape);
}

inline Tensor model_forward(ModelParams& params, const Tensor& x, ForwardMode mode,
                            Tape* tape = nullptr) {
  const bool update = mode == ForwardMode::kUpdateStats && params.config.normalize;
  return detail::forward_impl(params, update ? &params.stats : nullptr, x, tape);
}

/// Predicted class per row; ties resolve to the lower index.
inline std::vector<std::size_t> predicted_classes(const Tensor& probs) {
  const std::size_t batch = probs.dim(0), classes = probs.dim(1);
  std::vector<std::size_t> out(batch, 0);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t k = 1; k < classes; ++k) {
      if (probs[i * classes + k] > probs[i * classes + out[i]]) out[i] = k;
    }
  }
  return out;
}

// Checkpoint format: one text line
//   sslb-checkpoint <count> <name>:<d0>x<d1>... ...\n
// followed by the values of each tensor in header order as little-endian
// IEEE-754 doubles. Running normalization statistics are stored as
// norm<i>.running_mean / norm<i>.running_var.

namespace detail {
inline void write_le_double(std::ostream& os, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

inline double read_le_double(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) {
    throw DatasetError("checkpoint truncated");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}
}  // namespace detail

inline void save_checkpoint(const ModelParams& params, std::ostream& os) {
  std::vector<std::pair<std::string, std::vector<double>>> blobs;
  std::vector<Shape> shapes;
  for (const auto& nt : params.tensors) {
    blobs.emplace_back(nt.name, std::vector<double>(nt.tensor.values().begin(),
                                                    nt.tensor.values().end()));
    shapes.push_back(nt.tensor.shape());
  }
  for (std::size_t i = 0; i < params.stats.size(); ++i) {
    const std::string idx = std::to_string(i);
    blobs.emplace_back("norm" + idx + ".running_mean", params.stats[i].mean);
    shapes.push_back({params.stats[i].mean.size()});
    blobs.emplace_back("norm" + idx + ".running_var", params.stats[i].var);
    shapes.push_back({params.stats[i].var.size()});
  }
  os << "sslb-checkpoint " << blobs.size();
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    os << ' ' << blobs[i].first << ':';
    for (std::size_t d = 0; d < shapes[i].size(); ++d) {
      if (d) os << 'x';
      os << shapes[i][d];
    }
  }
  os << '\n';
  for (const auto& blob : blobs) {
    for (double v : blob.second) detail::write_le_double(os, v);
  }
}

/// Loads values into `params`, which must already have the checkpoint's
/// architecture (e.g. from model_init with the same config).
inline void load_checkpoint(ModelParams& params, std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DatasetError("checkpoint: missing header");
  std::istringstream header(line);
  std::string magic;
  std::size_t count = 0;
  header >> magic >> count;
  if (magic != "sslb-checkpoint") throw DatasetError("checkpoint: bad magic");

  auto target = [&params](const std::string& name) -> std::span<double> {
    for (auto& nt : params.tensors) {
      if (nt.name == name) return nt.tensor.values();
    }
    for (std::size_t i = 0; i < params.stats.size(); ++i) {
      const std::string idx = std::to_string(i);
      if (name == "norm" + idx + ".running_mean") return params.stats[i].mean;
      if (name == "norm" + idx + ".running_var") return params.stats[i].var;
    }
    throw DatasetError("checkpoint: unknown tensor " + name);
  };

  std::vector<std::pair<std::span<double>, std::size_t>> slots;
  for (std::size_t i = 0; i < count; ++i) {
    std::string entry;
    header >> entry;
    const auto colon = entry.find(':');
    if (colon == std::string::npos) throw DatasetError("checkpoint: bad entry " + entry);
    std::size_t n = 1;
    std::istringstream dims(entry.substr(colon + 1));
    std::string dim;
    while (std::getline(dims, dim, 'x')) n *= std::stoul(dim);
    auto span = target(entry.substr(0, colon));
    if (span.size() != n) {
      throw DimensionError("checkpoint: " + entry + " does not match model size " +
                           std::to_string(span.size()));
    }
    slots.emplace_back(span, n);
  }
  for (auto& [span, n] : slots) {
    for (std::size_t i = 0; i < n; ++i) span[i] = detail::read_le_double(is);
  }
}

}  // namespace sslb
