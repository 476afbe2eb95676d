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
#include <span>

#include "rest/tensor.hpp"

namespace rest {

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
};

struct Conv2dOptions {
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};
};

struct Pool2dOptions {
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};
};

/// Output extent of a strided window; throws ShapeError when not positive.
std::size_t window_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                                 std::size_t padding, const char* what);

// Forward kernels. Every kernel reports its cost to the active
// cost::Collector (if any) and honours dry-run mode. Accumulation order per
// output element is fixed, so results are bitwise reproducible.

/// input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] or null.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias, const Conv2dOptions& options);

/// input [B,C,H,W], weight [C,1,kh,kw], bias [C] or null.
template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>* bias, const Conv2dOptions& options);

/// a [...,M,K] x b [...,K,N]. Leading extents broadcast when equal or 1.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x [...,din] . weight [din,dout] + bias [dout].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias);

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::ptrdiff_t axis);

/// Standardizes every (batch, channel) slice of a rank-4 tensor over its two
/// trailing dimensions. No affine parameters. Constant slices map to zero.
template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, double epsilon);

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double epsilon);

/// Inference-mode batch normalization with fixed per-channel statistics.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& mean,
                          const BasicTensor<T>& var, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double epsilon);

/// Exact form x * Phi(x) with Phi the Gaussian CDF.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

/// Padding positions are excluded from the average.
template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, const Pool2dOptions& options);
/// Padding positions never win the max.
template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, const Pool2dOptions& options);
/// [B,C,H,W] -> [B,C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, std::span<const std::size_t> axes);
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  return x.reshape(std::move(shape));
}
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor);
/// x [B,...] + table [...] broadcast over the leading batch axis.
template <typename T>
BasicTensor<T> add_batch_broadcast(const BasicTensor<T>& x, const BasicTensor<T>& table);

// Backward kernels (double precision only). They never report cost.

struct ConvGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;  // empty when the forward had no bias
};

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias,
                          const Tensor& grad_out, const Conv2dOptions& options);
ConvGrads depthwise_conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias,
                                    const Tensor& grad_out, const Conv2dOptions& options);

struct MatmulGrads {
  Tensor a;
  Tensor b;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, bool has_bias,
                            const Tensor& grad_out);

Tensor softmax_backward(const Tensor& output, const Tensor& grad_out, std::ptrdiff_t axis);
Tensor instance_norm_backward(const Tensor& x, const Tensor& grad_out, double epsilon);

struct NormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
NormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& grad_out,
                              double epsilon);
NormGrads batch_norm_backward(const Tensor& x, const Tensor& mean, const Tensor& var,
                              const Tensor& gamma, const Tensor& grad_out, double epsilon);

/// Training-mode batch normalization: statistics over (B,H,W) per channel.
struct BatchNormTrainResult {
  Tensor output;
  Tensor mean;
  Tensor var;  // population variance
};
BatchNormTrainResult batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                      double epsilon);
NormGrads batch_norm_train_backward(const Tensor& x, const Tensor& gamma, const Tensor& grad_out,
                                    double epsilon);

Tensor gelu_backward(const Tensor& x, const Tensor& grad_out);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out);
Tensor avg_pool2d_backward(const Shape& input_shape, const Tensor& grad_out,
                           const Pool2dOptions& options);
Tensor max_pool2d_backward(const Tensor& x, const Tensor& grad_out, const Pool2dOptions& options);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);
Tensor permute_backward(const Tensor& grad_out, std::span<const std::size_t> axes);

}  // namespace rest
