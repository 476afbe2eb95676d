// Copyright 2026 The ResT Kit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rest/kernels.hpp"
#include "rest/parameter.hpp"
#include "rest/tensor.hpp"

namespace rest {

class GradTape;

namespace detail {

struct Node {
  Tensor owned;
  const Tensor* view = nullptr;  // set for leaves that alias a Parameter
  Tensor grad;                   // lazily allocated
  Tensor* grad_sink = nullptr;   // Parameter::grad receiving this leaf's gradient
  bool requires_grad = false;
  GradTape* tape = nullptr;
  std::function<void(const Tensor& grad, const Tensor& value)> backward;
  std::size_t visits = 0;

  const Tensor& value() const noexcept { return view != nullptr ? *view : owned; }
  void accumulate(const Tensor& g);
};

}  // namespace detail

/// Handle to a value produced under (or outside) a GradTape. Cheap to copy.
/// A Var without a tape is a plain constant and records nothing.
class Var {
 public:
  Var() = default;

  const Tensor& value() const { return node_->value(); }
  const Shape& shape() const { return node_->value().shape(); }
  std::size_t dim(std::ptrdiff_t axis) const { return node_->value().dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  GradTape* tape() const noexcept { return node_ ? node_->tape : nullptr; }
  bool defined() const noexcept { return static_cast<bool>(node_); }

  /// Gradient accumulated by the last backward pass; empty when none reached
  /// this value.
  const Tensor& grad() const { return node_->grad; }

 private:
  friend class GradTape;
  friend struct VarAccess;
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

Var constant(Tensor value);
/// Constant aliasing `value`, which must outlive every use of the Var.
Var constant_ref(const Tensor& value);

/// Records differentiable primitive applications in execution order. Since
/// every node is appended after its inputs, walking the record backwards is
/// a reverse topological order. One tape belongs to one execution context.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Leaf that owns its value and receives a gradient.
  Var variable(Tensor value);
  /// Leaf aliasing `param.value`; backward adds into `param.grad`.
  Var watch(Parameter& param);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  /// Throws ShapeError when `loss` is not a single-element tensor.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Visit counts from the most recent backward, in record order.
  std::vector<std::size_t> visit_counts() const;
  void clear() { nodes_.clear(); }

 private:
  friend struct VarAccess;
  void record(std::shared_ptr<detail::Node> node) { nodes_.push_back(std::move(node)); }
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Maps ParamRefs to Vars for one forward pass. Without a tape parameters
/// enter as constants (no copies); with a tape learnable parameters are
/// watched so backward fills Parameter::grad, and buffers stay constant.
class ParamBinder {
 public:
  explicit ParamBinder(const ParameterSet& params);
  ParamBinder(ParameterSet& params, GradTape& tape);

  Var operator()(ParamRef ref);
  const ParameterSet& params() const noexcept { return *params_; }
  GradTape* tape() const noexcept { return tape_; }

 private:
  const ParameterSet* params_;
  ParameterSet* mutable_params_ = nullptr;
  GradTape* tape_ = nullptr;
  std::vector<Var> cache_;
};

// Differentiable primitives. Shape rules and cost accounting are those of
// the tensor kernels of the same name.

Var conv2d(const Var& input, const Var& weight, const Var* bias, const Conv2dOptions& options);
Var depthwise_conv2d(const Var& input, const Var& weight, const Var* bias,
                     const Conv2dOptions& options);
Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& weight, const Var* bias);
Var softmax(const Var& x, std::ptrdiff_t axis);
Var instance_norm(const Var& x, double epsilon);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double epsilon);
/// Fixed-statistics batch norm; mean and var are treated as constants.
Var batch_norm(const Var& x, const Tensor& mean, const Tensor& var, const Var& gamma,
               const Var& beta, double epsilon);
/// Batch-statistics batch norm. Writes the batch mean and population
/// variance to the optional outputs.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double epsilon,
                     Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr);
Var gelu(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var avg_pool2d(const Var& x, const Pool2dOptions& options);
Var max_pool2d(const Var& x, const Pool2dOptions& options);
Var global_avg_pool(const Var& x);
Var permute(const Var& x, std::span<const std::size_t> axes);
Var reshape(const Var& x, Shape shape);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_batch_broadcast(const Var& x, const Var& table);
Var sum(const Var& x);
Var sum_squares(const Var& x);
/// Mean cross-entropy of logits [B,K] against integer labels.
Var cross_entropy(const Var& logits, std::span<const std::size_t> labels);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

}  // namespace rest
