#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stsc/tensor.hpp"

namespace stsc {

using NodeId = std::int32_t;

enum class OpKind : std::uint8_t {
  leaf,
  conv2d,
  relu,
  sigmoid,
  avg_pool_k2,
  max_pool_k2,
  nearest_up_x2,
  space_to_depth_x2,
  depth_to_space_x2,
  avg_pool_to,
  nearest_to,
  adaptive_avg_pool,
  nearest_resize,
  concat_channels,
  mul,
  add,
  sub,
  div,
  scale,
  add_scalar,
  abs,
  square,
  pow_scalar,
  clamp_min,
  global_avg_pool,
  gaussian_blur,
  sum_all,
  mean_all,
};

const char* to_string(OpKind kind);

class Tape;

/// A value flowing through a computation. Tracked values carry a node on a
/// tape; untracked values are constants that never receive gradients.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value);

  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  Precision precision() const { return value_->precision(); }
  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }
  const std::shared_ptr<const Tensor>& shared() const { return value_; }

 private:
  friend class Tape;
  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  NodeId node_ = -1;
};

/// Gradient accumulation callback: `grad_out` is dLoss/dOutput, each non-null
/// entry of `parent_grads` must be incremented by the parent's contribution.
using GradFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

/// Parameter/input identifier -> gradient, in leaf registration order.
class GradMap {
 public:
  void insert(std::string name, Tensor grad);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Recorded computation graph. Nodes are appended in evaluation order, so the
/// node list is always a valid topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf with a unique identifier.
  Var input(std::string id, Tensor value);
  /// Differentiable leaf memoized by identifier: repeated calls with the same
  /// id return the same node, so shared parameters accumulate one gradient.
  Var param(const std::string& id, const Tensor& value);

  /// Reverse pass from a scalar loss. Every registered leaf appears in the
  /// result; unreached leaves get zero gradients.
  GradMap backward(const Var& loss) const;

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }
  std::span<const NodeId> parents(NodeId id) const {
    return nodes_.at(static_cast<std::size_t>(id)).parents;
  }
  /// Number of nodes visited by the most recent backward pass.
  std::size_t last_backward_visits() const { return last_visits_; }

  /// Records an op result. Returns an untracked Var when no parent is tracked.
  static Var record(OpKind kind, std::initializer_list<const Var*> parents, Tensor value,
                    GradFn fn);
  static Var record(OpKind kind, const std::vector<const Var*>& parents, Tensor value, GradFn fn);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> parents;  // -1 marks an untracked (constant) parent
    Shape shape{};
    Precision precision = Precision::f64;
    GradFn fn;
    std::string leaf_id;
  };

  Var push(Node node, std::shared_ptr<const Tensor> value);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> params_;
  std::vector<NodeId> leaves_;
  mutable std::size_t last_visits_ = 0;
};

GradMap backward(const Tape& tape, const Var& loss);

// Differentiable primitives. Every op accepts tracked and untracked inputs.

enum class Activation : std::uint8_t { none, relu, sigmoid };

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding);
Var activation(const Var& input, Activation kind);
Var relu(const Var& input);
Var sigmoid(const Var& input);

enum class ResampleKind : std::uint8_t {
  avg_pool_k2,
  max_pool_k2,
  nearest_up_x2,
  space_to_depth_x2,
  depth_to_space_x2,
  avg_pool_to,
  nearest_to,
  adaptive_avg_pool,
  nearest_resize,
};

/// `target_h/target_w` are used by the *_to, adaptive and resize kinds only.
Var resample(const Var& input, ResampleKind kind, std::int64_t target_h = 0,
             std::int64_t target_w = 0);

enum class CombineKind : std::uint8_t { concat_channels, elementwise_mul, add };

Var combine(const Var& a, const Var& b, CombineKind kind);
Var concat_channels(const std::vector<Var>& parts);
Var mul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var abs(const Var& a);
Var square(const Var& a);
/// a^p for a > 0.
Var pow_scalar(const Var& a, double exponent);
/// max(a, floor); gradient is zero where the floor is active.
Var clamp_min(const Var& a, double floor);
Var global_avg_pool(const Var& input);
/// Depthwise separable "valid" correlation with a 1-D kernel along both axes.
Var gaussian_blur(const Var& input, std::span<const double> kernel);
Var sum_all(const Var& input);
Var mean_all(const Var& input);

/// Central difference (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
double numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        std::int64_t coordinate, double eps);

}  // namespace stsc
