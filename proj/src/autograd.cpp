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

#include "rest/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "rest/cost.hpp"

namespace rest {

using NodePtr = std::shared_ptr<detail::Node>;
using BackwardFn = std::function<void(const Tensor& grad, const Tensor& value)>;

void detail::Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  if (grad.shape() != g.shape()) {
    throw ShapeError("gradient shape " + to_string(g.shape()) + " does not match " +
                     to_string(grad.shape()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

struct VarAccess {
  static const NodePtr& node(const Var& v) { return v.node_; }
  static Var wrap(NodePtr n) { return Var(std::move(n)); }
  static void record(GradTape& tape, NodePtr n) { tape.record(std::move(n)); }
};

namespace {

const NodePtr& node_of(const Var& v) {
  const NodePtr& n = VarAccess::node(v);
  if (!n) throw std::invalid_argument("use of an undefined Var");
  return n;
}

NodePtr node_or_null(const Var* v) { return v != nullptr ? node_of(*v) : nullptr; }

const Tensor* value_or_null(const Var* v) { return v != nullptr ? &v->value() : nullptr; }

void push(const NodePtr& n, const Tensor& g) {
  if (n && n->requires_grad) n->accumulate(g);
}

// Wraps a computed value; records it when any input carries a gradient.
Var emit(Tensor value, std::initializer_list<const Var*> inputs, BackwardFn backward) {
  GradTape* tape = nullptr;
  bool needs_grad = false;
  for (const Var* in : inputs) {
    if (in == nullptr || !in->requires_grad()) continue;
    if (tape != nullptr && in->tape() != tape) {
      throw std::invalid_argument("operation mixes values from two different GradTapes");
    }
    tape = in->tape();
    needs_grad = true;
  }
  auto node = std::make_shared<detail::Node>();
  node->owned = std::move(value);
  if (needs_grad && !cost::dry_run()) {
    node->requires_grad = true;
    node->tape = tape;
    node->backward = std::move(backward);
    VarAccess::record(*tape, node);
  }
  return VarAccess::wrap(std::move(node));
}

}  // namespace

Var constant(Tensor value) {
  auto node = std::make_shared<detail::Node>();
  node->owned = std::move(value);
  return VarAccess::wrap(std::move(node));
}

Var constant_ref(const Tensor& value) {
  auto node = std::make_shared<detail::Node>();
  node->view = &value;
  return VarAccess::wrap(std::move(node));
}

ParamBinder::ParamBinder(const ParameterSet& params) : params_(&params), cache_(params.size()) {}

ParamBinder::ParamBinder(ParameterSet& params, GradTape& tape)
    : params_(&params), mutable_params_(&params), tape_(&tape), cache_(params.size()) {}

Var ParamBinder::operator()(ParamRef ref) {
  Var& slot = cache_.at(ref.index);
  if (!slot.defined()) {
    if (tape_ != nullptr && (*params_)[ref].kind == ParamKind::kLearnable) {
      slot = tape_->watch((*mutable_params_)[ref]);
    } else {
      slot = constant_ref((*params_)[ref].value);
    }
  }
  return slot;
}

Var GradTape::variable(Tensor value) {
  auto node = std::make_shared<detail::Node>();
  node->owned = std::move(value);
  node->requires_grad = true;
  node->tape = this;
  record(node);
  return VarAccess::wrap(std::move(node));
}

Var GradTape::watch(Parameter& param) {
  auto node = std::make_shared<detail::Node>();
  node->view = &param.value;
  node->grad_sink = &param.grad;
  node->requires_grad = true;
  node->tape = this;
  record(node);
  return VarAccess::wrap(std::move(node));
}

void GradTape::backward(const Var& loss) {
  const NodePtr& root = node_of(loss);
  if (root->value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(root->value().shape()));
  }
  if (!root->requires_grad || root->tape != this) {
    throw std::invalid_argument("loss was not produced under this tape");
  }
  for (auto& n : nodes_) {
    n->visits = 0;
    n->grad = Tensor();
  }
  root->grad = Tensor(root->value().shape(), 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    ++n.visits;
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(n.grad, n.value());
    if (n.grad_sink != nullptr) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*n.grad_sink)[i] += n.grad[i];
    }
  }
}

std::vector<std::size_t> GradTape::visit_counts() const {
  std::vector<std::size_t> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n->visits);
  return out;
}

Var conv2d(const Var& input, const Var& weight, const Var* bias, const Conv2dOptions& options) {
  Tensor out = conv2d(input.value(), weight.value(), value_or_null(bias), options);
  return emit(std::move(out), {&input, &weight, bias},
              [x = node_of(input), w = node_of(weight), b = node_or_null(bias), options](
                  const Tensor& g, const Tensor&) {
                ConvGrads gr = conv2d_backward(x->value(), w->value(), b != nullptr, g, options);
                push(x, gr.input);
                push(w, gr.weight);
                push(b, gr.bias);
              });
}

Var depthwise_conv2d(const Var& input, const Var& weight, const Var* bias,
                     const Conv2dOptions& options) {
  Tensor out = depthwise_conv2d(input.value(), weight.value(), value_or_null(bias), options);
  return emit(std::move(out), {&input, &weight, bias},
              [x = node_of(input), w = node_of(weight), b = node_or_null(bias), options](
                  const Tensor& g, const Tensor&) {
                ConvGrads gr =
                    depthwise_conv2d_backward(x->value(), w->value(), b != nullptr, g, options);
                push(x, gr.input);
                push(w, gr.weight);
                push(b, gr.bias);
              });
}

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  return emit(std::move(out), {&a, &b},
              [na = node_of(a), nb = node_of(b)](const Tensor& g, const Tensor&) {
                MatmulGrads gr = matmul_backward(na->value(), nb->value(), g);
                push(na, gr.a);
                push(nb, gr.b);
              });
}

Var linear(const Var& x, const Var& weight, const Var* bias) {
  Tensor out = linear(x.value(), weight.value(), value_or_null(bias));
  return emit(std::move(out), {&x, &weight, bias},
              [nx = node_of(x), w = node_of(weight), b = node_or_null(bias)](const Tensor& g,
                                                                           const Tensor&) {
                LinearGrads gr = linear_backward(nx->value(), w->value(), b != nullptr, g);
                push(nx, gr.input);
                push(w, gr.weight);
                push(b, gr.bias);
              });
}

Var softmax(const Var& x, std::ptrdiff_t axis) {
  Tensor out = softmax(x.value(), axis);
  return emit(std::move(out), {&x}, [nx = node_of(x), axis](const Tensor& g, const Tensor& y) {
    push(nx, softmax_backward(y, g, axis));
  });
}

Var instance_norm(const Var& x, double epsilon) {
  Tensor out = instance_norm(x.value(), epsilon);
  return emit(std::move(out), {&x}, [nx = node_of(x), epsilon](const Tensor& g, const Tensor&) {
    push(nx, instance_norm_backward(nx->value(), g, epsilon));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double epsilon) {
  Tensor out = layer_norm(x.value(), gamma.value(), beta.value(), epsilon);
  return emit(std::move(out), {&x, &gamma, &beta},
              [nx = node_of(x), ng = node_of(gamma), nb = node_of(beta), epsilon](
                  const Tensor& g, const Tensor&) {
                NormGrads gr = layer_norm_backward(nx->value(), ng->value(), g, epsilon);
                push(nx, gr.input);
                push(ng, gr.gamma);
                push(nb, gr.beta);
              });
}

Var batch_norm(const Var& x, const Tensor& mean, const Tensor& var, const Var& gamma,
               const Var& beta, double epsilon) {
  Tensor out = batch_norm(x.value(), mean, var, gamma.value(), beta.value(), epsilon);
  return emit(std::move(out), {&x, &gamma, &beta},
              [nx = node_of(x), ng = node_of(gamma), nb = node_of(beta), mean, var, epsilon](
                  const Tensor& g, const Tensor&) {
                NormGrads gr = batch_norm_backward(nx->value(), mean, var, ng->value(), g, epsilon);
                push(nx, gr.input);
                push(ng, gr.gamma);
                push(nb, gr.beta);
              });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double epsilon,
                     Tensor* batch_mean, Tensor* batch_var) {
  BatchNormTrainResult r = batch_norm_train(x.value(), gamma.value(), beta.value(), epsilon);
  if (batch_mean != nullptr) *batch_mean = r.mean;
  if (batch_var != nullptr) *batch_var = r.var;
  return emit(std::move(r.output), {&x, &gamma, &beta},
              [nx = node_of(x), ng = node_of(gamma), nb = node_of(beta), epsilon](
                  const Tensor& g, const Tensor&) {
                NormGrads gr = batch_norm_train_backward(nx->value(), ng->value(), g, epsilon);
                push(nx, gr.input);
                push(ng, gr.gamma);
                push(nb, gr.beta);
              });
}

Var gelu(const Var& x) {
  return emit(gelu(x.value()), {&x}, [nx = node_of(x)](const Tensor& g, const Tensor&) {
    push(nx, gelu_backward(nx->value(), g));
  });
}

Var relu(const Var& x) {
  return emit(relu(x.value()), {&x}, [nx = node_of(x)](const Tensor& g, const Tensor&) {
    push(nx, relu_backward(nx->value(), g));
  });
}

Var sigmoid(const Var& x) {
  return emit(sigmoid(x.value()), {&x}, [nx = node_of(x)](const Tensor& g, const Tensor& y) {
    push(nx, sigmoid_backward(y, g));
  });
}

Var avg_pool2d(const Var& x, const Pool2dOptions& options) {
  return emit(avg_pool2d(x.value(), options), {&x},
              [nx = node_of(x), options](const Tensor& g, const Tensor&) {
                push(nx, avg_pool2d_backward(nx->value().shape(), g, options));
              });
}

Var max_pool2d(const Var& x, const Pool2dOptions& options) {
  return emit(max_pool2d(x.value(), options), {&x},
              [nx = node_of(x), options](const Tensor& g, const Tensor&) {
                push(nx, max_pool2d_backward(nx->value(), g, options));
              });
}

Var global_avg_pool(const Var& x) {
  return emit(global_avg_pool(x.value()), {&x}, [nx = node_of(x)](const Tensor& g, const Tensor&) {
    push(nx, global_avg_pool_backward(nx->value().shape(), g));
  });
}

Var permute(const Var& x, std::span<const std::size_t> axes) {
  std::vector<std::size_t> order(axes.begin(), axes.end());
  return emit(permute(x.value(), axes), {&x},
              [nx = node_of(x), order](const Tensor& g, const Tensor&) {
                push(nx, permute_backward(g, order));
              });
}

Var reshape(const Var& x, Shape shape) {
  return emit(x.value().reshape(std::move(shape)), {&x},
              [nx = node_of(x)](const Tensor& g, const Tensor&) {
                push(nx, g.reshape(nx->value().shape()));
              });
}

Var add(const Var& a, const Var& b) {
  return emit(add(a.value(), b.value()), {&a, &b},
              [na = node_of(a), nb = node_of(b)](const Tensor& g, const Tensor&) {
                push(na, g);
                push(nb, g);
              });
}

Var mul(const Var& a, const Var& b) {
  return emit(mul(a.value(), b.value()), {&a, &b},
              [na = node_of(a), nb = node_of(b)](const Tensor& g, const Tensor&) {
                if (na->requires_grad) push(na, mul(g, nb->value()));
                if (nb->requires_grad) push(nb, mul(g, na->value()));
              });
}

Var scale(const Var& x, double factor) {
  return emit(scale(x.value(), factor), {&x},
              [nx = node_of(x), factor](const Tensor& g, const Tensor&) {
                push(nx, scale(g, factor));
              });
}

Var add_batch_broadcast(const Var& x, const Var& table) {
  return emit(add_batch_broadcast(x.value(), table.value()), {&x, &table},
              [nx = node_of(x), nt = node_of(table)](const Tensor& g, const Tensor&) {
                push(nx, g);
                if (nt->requires_grad) {
                  Tensor gt(nt->value().shape());
                  const std::size_t per = gt.size();
                  for (std::size_t i = 0; i < g.size(); ++i) gt[i % per] += g[i];
                  push(nt, gt);
                }
              });
}

Var sum(const Var& x) {
  double total = 0;
  for (double v : x.value().values()) total += v;
  cost::add_other(x.value().size());
  return emit(Tensor::scalar(total), {&x}, [nx = node_of(x)](const Tensor& g, const Tensor&) {
    push(nx, Tensor(nx->value().shape(), g.item()));
  });
}

Var sum_squares(const Var& x) {
  double total = 0;
  for (double v : x.value().values()) total += v * v;
  cost::add_other(x.value().size());
  return emit(Tensor::scalar(total), {&x}, [nx = node_of(x)](const Tensor& g, const Tensor&) {
    push(nx, scale(nx->value(), 2.0 * g.item()));
  });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + to_string(z.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = z.dim(0);
  const std::size_t classes = z.dim(1);
  Tensor probs(z.shape());
  double loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) throw std::invalid_argument("cross_entropy: label out of range");
    const double* row = z.data() + b * classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes; ++k) mx = std::max(mx, row[k]);
    double s = 0;
    for (std::size_t k = 0; k < classes; ++k) s += std::exp(row[k] - mx);
    const double lse = mx + std::log(s);
    loss += lse - row[labels[b]];
    for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] = std::exp(row[k] - lse);
  }
  loss /= static_cast<double>(batch);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return emit(Tensor::scalar(loss), {&logits},
              [nz = node_of(logits), probs = std::move(probs), lab = std::move(lab)](
                  const Tensor& g, const Tensor&) {
                const std::size_t batch = probs.dim(0);
                const std::size_t classes = probs.dim(1);
                Tensor gz = probs;
                for (std::size_t b = 0; b < batch; ++b) gz[b * classes + lab[b]] -= 1.0;
                push(nz, scale(gz, g.item() / static_cast<double>(batch)));
              });
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Tensor probe = x;
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace rest
