#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "seis/tensor.hpp"

namespace seis {

enum class Mode { train, eval };

/// A named trainable tensor (or non-trainable buffer such as running
/// normalization statistics). grad is absent until a backward pass touches
/// the parameter.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // absent() until populated
  bool trainable = true;
};

/// Owns parameters with stable addresses and unique hierarchical names.
class ParamStore {
public:
  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& at(std::size_t i) { return params_[i]; }
  const Parameter& at(std::size_t i) const { return params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t trainable_scalar_count() const;
  void zero_grads();

private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t idx = UINT32_MAX;
  bool valid() const { return idx != UINT32_MAX; }
};

/// Running statistics used by batch_norm; the tensors live in a ParamStore
/// as non-trainable buffers and are updated in place in train mode.
struct BatchNormBuffers {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

/// Record of one step's computation. Nodes are appended in execution order,
/// so every node's inputs precede it and backward() can sweep the list once
/// in reverse. One tape per training step; not thread-safe.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  /// Leaf bound to a Parameter: backward() accumulates into p.grad.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  /// Gradient w.r.t. v after backward(); absent tensor if v was not reached.
  const Tensor& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Populates grad on every trainable
  /// Parameter bound to this tape (zeros when the parameter does not
  /// influence the loss), accumulating over multiple uses.
  void backward(Var loss);

  // --- op-implementation interface -------------------------------------
  using BackFn = std::function<void(Tape&, Var self)>;
  /// Appends a node. Debug builds reject non-finite values here, which
  /// catches numerical blowups at the operation that produced them.
  Var emit(Tensor value, std::vector<Var> inputs, BackFn back);
  /// True when gradients must be propagated into v.
  bool tracked(Var v) const;
  /// Zero-initialized gradient buffer for accumulation; nullptr when the
  /// node does not require gradients.
  Tensor* grad_accum(Var v);

private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> inputs;
    BackFn back;
    bool requires_grad = false;
    Parameter* bound = nullptr;
  };

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

/// 2-d cross-correlation with zero padding; kernel k x k with k odd and
/// padding (k-1)/2, so spatial size is preserved (k = 1, padding 0 gives a
/// pointwise convolution). input [B,Cin,H,W], weight [Cout,Cin,k,k],
/// bias [Cout] -> [B,Cout,H,W].
Var conv2d(Tape& t, Var input, Var weight, Var bias, int padding);

/// Per-channel batch normalization over all non-channel axes of a
/// [N,C,H,W] input. Train mode uses batch statistics and updates the
/// running buffers by exponential moving average (unbiased variance in the
/// running buffer); eval mode normalizes with the running statistics.
Var batch_norm(Tape& t, Var input, Var gamma, Var beta, BatchNormBuffers buffers,
               Mode mode, double eps = 1e-5, double momentum = 0.1);

Var leaky_relu(Tape& t, Var input, double slope);

/// 2x2 non-overlapping max pooling; H and W must be even. Backward routes
/// the gradient to the first maximal element of each window (row-major
/// scan order).
Var max_pool2(Tape& t, Var input);

/// Nearest-neighbor 2x upsampling; backward sums the four replicas.
Var upsample_nearest2(Tape& t, Var input);

/// Concatenation along the channel axis (axis ndim-3, so it works for both
/// [B,C,H,W] and [S,B,C,H,W] layouts). All other dims must match.
Var concat_channels(Tape& t, Var a, Var b);

/// Arithmetic mean over the leading set axis: [S,...] -> [...]. S >= 1.
Var mean_over_set(Tape& t, Var stack);

/// Replicates [B,C,H,W] into [S,B,C,H,W]; backward sums over the set axis.
Var repeat_set(Tape& t, Var input, std::size_t set_size);

Var reshape(Tape& t, Var input, Shape new_shape);

/// Mean absolute difference over all elements -> scalar shape {1}.
/// Subgradient at exact ties is 0.
Var l1_loss(Tape& t, Var pred, Var target);

Var sum_all(Tape& t, Var input);

/// Scalar probe sum_i input_i * weights_i (fixed weights); lets tests take
/// gradients along arbitrary directions.
Var inner(Tape& t, Var input, const Tensor& weights);

}  // namespace seis
