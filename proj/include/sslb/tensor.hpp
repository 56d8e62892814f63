#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sslb/errors.hpp"

namespace sslb {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets a Tape hold on to the inputs of recorded operations. Use clone() for
/// an independent deep copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    for (std::size_t extent : shape) {
      if (extent == 0) {
        throw DimensionError("tensor extents must be positive, got " +
                             shape_string(shape));
      }
    }
    if (shape_size(shape) != values.size()) {
      throw DimensionError("shape " + shape_string(shape) + " holds " +
                           std::to_string(shape_size(shape)) +
                           " values, got " + std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> values(shape_size(shape), 0.0);
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor filled(Shape shape, double value) {
    std::vector<double> values(shape_size(shape), value);
    return Tensor(std::move(shape), std::move(values));
  }

  /// Rank-0 tensor holding one value.
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->values.size(); }

  std::span<double> values() { return impl_->values; }
  std::span<const double> values() const { return impl_->values; }
  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }

  double& operator[](std::size_t i) { return impl_->values[i]; }
  double operator[](std::size_t i) const { return impl_->values[i]; }

  double item() const {
    if (size() != 1) {
      throw ContractError("item() on tensor of shape " + shape_string(shape()));
    }
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<double> grad() { return impl_->grad; }
  std::span<const double> grad() const { return impl_->grad; }

  /// Allocates a zero gradient if none exists. The gradient buffer belongs
  /// to the shared storage, so this is available through const handles.
  std::span<double> ensure_grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(size(), 0.0);
    return impl_->grad;
  }

  void zero_grad() const {
    if (!impl_->grad.empty()) {
      std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }
  }

  void clear_grad() { impl_->grad.clear(); }

  Tensor clone() const {
    Tensor out(impl_->shape, impl_->values, impl_->requires_grad);
    out.impl_->grad = impl_->grad;
    return out;
  }

  /// Same shape and values; reshaping never copies gradient state.
  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), impl_->values);
  }

  bool is_same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Define-by-run record of differentiable operations.
///
/// Operations append themselves as they execute, so the node list is always
/// in topological order. A fresh Tape is built for each forward pass.
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule) {
    nodes_.push_back({std::move(inputs), std::move(output), std::move(rule)});
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Propagates d(loss)/d(t) into every requires_grad tensor on the tape.
  /// All gradients touched by the tape are reset first, so tensors that do
  /// not influence the loss end with a zero gradient.
  void backward(Tensor loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError(
          "backward requires a scalar loss, got shape " +
          (loss.defined() ? shape_string(loss.shape()) : std::string("<none>")));
    }
    for (auto& node : nodes_) {
      for (auto& in : node.inputs) {
        if (in.requires_grad()) {
          in.ensure_grad();
          in.zero_grad();
        }
      }
      node.output.ensure_grad();
      node.output.zero_grad();
    }
    if (loss.requires_grad()) {
      loss.ensure_grad()[0] = 1.0;
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->rule();
    }
  }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardRule rule;
  };
  std::vector<Node> nodes_;
};

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

}  // namespace sslb
