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

#include "rest/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "rest/cost.hpp"

namespace rest {

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(shape));
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

void require_vector(const Shape& shape, std::size_t n, const char* what) {
  if (shape.size() != 1 || shape[0] != n) {
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(n) + "], got " +
                     to_string(shape));
  }
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const auto a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Range of output positions o for which o*stride + k - pad lies in [0, n).
struct ValidRange {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;  // exclusive
};

ValidRange valid_outputs(std::size_t n, std::size_t out, std::size_t stride, std::size_t k,
                         std::size_t pad) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto offset = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  const std::ptrdiff_t limit = static_cast<std::ptrdiff_t>(n) - offset;  // o*s < limit
  std::ptrdiff_t hi = limit <= 0 ? 0 : (limit + s - 1) / s;
  hi = std::min(hi, static_cast<std::ptrdiff_t>(out));
  return {lo, std::max(lo, hi)};
}

struct ConvShape {
  std::size_t batch, cin, h, w, cout, kh, kw, oh, ow;
};

ConvShape check_conv(const Shape& in, const Shape& wt, const Conv2dOptions& o, bool depthwise) {
  const char* what = depthwise ? "depthwise_conv2d" : "conv2d";
  require_rank(in, 4, what);
  require_rank(wt, 4, what);
  if (o.stride.h == 0 || o.stride.w == 0) {
    throw ShapeError(std::string(what) + ": strides must be >= 1");
  }
  ConvShape s{};
  s.batch = in[0];
  s.cin = in[1];
  s.h = in[2];
  s.w = in[3];
  s.cout = wt[0];
  s.kh = wt[2];
  s.kw = wt[3];
  if (depthwise) {
    if (wt[1] != 1 || wt[0] != in[1]) {
      throw ShapeError(std::string(what) + ": weight " + to_string(wt) +
                       " incompatible with input channels " + std::to_string(in[1]));
    }
  } else if (wt[1] != in[1]) {
    throw ShapeError(std::string(what) + ": weight expects " + std::to_string(wt[1]) +
                     " input channels, input " + to_string(in) + " has " + std::to_string(in[1]));
  }
  s.oh = window_output_extent(s.h, s.kh, o.stride.h, o.padding.h, what);
  s.ow = window_output_extent(s.w, s.kw, o.stride.w, o.padding.w, what);
  return s;
}

template <typename T>
void add_channel_bias(BasicTensor<T>& out, const BasicTensor<T>& bias) {
  const std::size_t batch = out.dim(0);
  const std::size_t channels = out.dim(1);
  const std::size_t plane = out.dim(2) * out.dim(3);
  T* o = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      T* p = o + (b * channels + c) * plane;
      const T v = bias[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += v;
    }
  }
}

// Accumulates w * in over one (kh, kw) tap into an output plane.
template <typename T>
void accumulate_tap(T* out_plane, const T* in_plane, T wv, const ConvShape& s,
                    const Conv2dOptions& o, std::size_t ki, std::size_t kj) {
  const ValidRange rows = valid_outputs(s.h, s.oh, o.stride.h, ki, o.padding.h);
  const ValidRange cols = valid_outputs(s.w, s.ow, o.stride.w, kj, o.padding.w);
  const auto sh = static_cast<std::ptrdiff_t>(o.stride.h);
  const auto sw = static_cast<std::ptrdiff_t>(o.stride.w);
  const auto row_off = static_cast<std::ptrdiff_t>(ki) - static_cast<std::ptrdiff_t>(o.padding.h);
  const auto col_off = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(o.padding.w);
  const auto width = static_cast<std::ptrdiff_t>(s.w);
  const auto out_width = static_cast<std::ptrdiff_t>(s.ow);
  for (std::ptrdiff_t r = rows.lo; r < rows.hi; ++r) {
    const T* irow = in_plane + (r * sh + row_off) * width;
    T* orow = out_plane + r * out_width;
    if (sw == 1) {
      const T* src = irow + col_off;
      for (std::ptrdiff_t c = cols.lo; c < cols.hi; ++c) orow[c] += wv * src[c];
    } else {
      for (std::ptrdiff_t c = cols.lo; c < cols.hi; ++c) orow[c] += wv * irow[c * sw + col_off];
    }
  }
}

template <typename T>
T erf_gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (static_cast<T>(1) + e);
}

struct PoolShape {
  std::size_t batch, channels, h, w, oh, ow;
};

PoolShape check_pool(const Shape& in, const Pool2dOptions& o, const char* what) {
  require_rank(in, 4, what);
  if (o.stride.h == 0 || o.stride.w == 0) throw ShapeError(std::string(what) + ": strides must be >= 1");
  if (o.padding.h * 2 > o.kernel.h || o.padding.w * 2 > o.kernel.w) {
    // Larger padding would produce windows made entirely of padding.
    throw ShapeError(std::string(what) + ": padding must not exceed half the kernel");
  }
  return {in[0], in[1], in[2], in[3],
          window_output_extent(in[2], o.kernel.h, o.stride.h, o.padding.h, what),
          window_output_extent(in[3], o.kernel.w, o.stride.w, o.padding.w, what)};
}

// Index bounds of the window of output (r, c) clipped to the input.
struct Window {
  std::size_t r0, r1, c0, c1;
};

Window clip_window(const PoolShape& s, const Pool2dOptions& o, std::size_t r, std::size_t c) {
  const auto top = static_cast<std::ptrdiff_t>(r * o.stride.h) - static_cast<std::ptrdiff_t>(o.padding.h);
  const auto left = static_cast<std::ptrdiff_t>(c * o.stride.w) - static_cast<std::ptrdiff_t>(o.padding.w);
  const auto bottom = top + static_cast<std::ptrdiff_t>(o.kernel.h);
  const auto right = left + static_cast<std::ptrdiff_t>(o.kernel.w);
  Window win{};
  win.r0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(top, 0));
  win.c0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(left, 0));
  win.r1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(bottom, static_cast<std::ptrdiff_t>(s.h)));
  win.c1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(right, static_cast<std::ptrdiff_t>(s.w)));
  return win;
}

struct BatchedShape {
  Shape lead;
  std::size_t slices = 1;
  std::size_t m = 0, k = 0, n = 0;
  std::vector<std::size_t> a_offset;  // per output slice, in units of slices of a
  std::vector<std::size_t> b_offset;
};

BatchedShape check_matmul(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a) + " and " + to_string(b));
  }
  BatchedShape s;
  s.m = a[a.size() - 2];
  s.k = a[a.size() - 1];
  s.n = b[b.size() - 1];
  if (b[b.size() - 2] != s.k) {
    throw ShapeError("matmul: inner extents differ, " + to_string(a) + " x " + to_string(b));
  }
  const std::size_t la = a.size() - 2;
  const std::size_t lb = b.size() - 2;
  const std::size_t lead = std::max(la, lb);
  s.lead.assign(lead, 1);
  Shape ea(lead, 1), eb(lead, 1);
  for (std::size_t i = 0; i < la; ++i) ea[lead - la + i] = a[i];
  for (std::size_t i = 0; i < lb; ++i) eb[lead - lb + i] = b[i];
  for (std::size_t i = 0; i < lead; ++i) {
    if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1) {
      throw ShapeError("matmul: batch extents not broadcastable, " + to_string(a) + " x " +
                       to_string(b));
    }
    s.lead[i] = std::max(ea[i], eb[i]);
  }
  s.slices = numel(s.lead);
  s.a_offset.resize(s.slices);
  s.b_offset.resize(s.slices);
  for (std::size_t idx = 0; idx < s.slices; ++idx) {
    std::size_t rem = idx;
    std::size_t oa = 0, ob = 0, stride_a = 1, stride_b = 1;
    for (std::size_t d = lead; d-- > 0;) {
      const std::size_t coord = rem % s.lead[d];
      rem /= s.lead[d];
      if (ea[d] != 1) oa += coord * stride_a;
      if (eb[d] != 1) ob += coord * stride_b;
      stride_a *= ea[d];
      stride_b *= eb[d];
    }
    s.a_offset[idx] = oa;
    s.b_offset[idx] = ob;
  }
  return s;
}

// c[m,n] += a[m,k] * b[k,n]; row-major, k accumulated in ascending order.
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor transpose_last(const Tensor& x) {
  const std::size_t r = x.rank();
  std::vector<std::size_t> axes(r);
  for (std::size_t i = 0; i < r; ++i) axes[i] = i;
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

template <typename T>
BasicTensor<T> raw_matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const BatchedShape s = check_matmul(a.shape(), b.shape());
  Shape out_shape = s.lead;
  out_shape.push_back(s.m);
  out_shape.push_back(s.n);
  BasicTensor<T> out(out_shape);
  for (std::size_t idx = 0; idx < s.slices; ++idx) {
    gemm_accumulate(a.data() + s.a_offset[idx] * s.m * s.k, b.data() + s.b_offset[idx] * s.k * s.n,
                    out.data() + idx * s.m * s.n, s.m, s.k, s.n);
  }
  return out;
}

// Sums a full-rank gradient down to `target` shape along broadcast axes.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  const std::size_t r = g.rank();
  Shape et(r, 1);
  for (std::size_t i = 0; i < target.size(); ++i) et[r - target.size() + i] = target[i];
  Tensor out(target);
  const Shape& gs = g.shape();
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    std::size_t rem = idx, off = 0, stride = 1;
    for (std::size_t d = r; d-- > 0;) {
      const std::size_t coord = rem % gs[d];
      rem /= gs[d];
      if (et[d] != 1) off += coord * stride;
      stride *= et[d];
    }
    out[off] += g[idx];
  }
  return out;
}

}  // namespace

std::size_t window_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                                 std::size_t padding, const char* what) {
  const std::size_t padded = input + 2 * padding;
  if (kernel == 0 || stride == 0 || kernel > padded) {
    throw ShapeError(std::string(what) + ": kernel " + std::to_string(kernel) +
                     " does not fit padded extent " + std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias, const Conv2dOptions& options) {
  const ConvShape s = check_conv(input.shape(), weight.shape(), options, false);
  if (bias != nullptr) require_vector(bias->shape(), s.cout, "conv2d bias");
  BasicTensor<T> out({s.batch, s.cout, s.oh, s.ow});
  cost::add_macs(static_cast<std::uint64_t>(s.batch) * s.cout * s.oh * s.ow * s.cin * s.kh * s.kw);
  if (bias != nullptr) cost::add_other(out.size());
  if (cost::dry_run()) return out;

  const std::size_t in_plane = s.h * s.w;
  const std::size_t out_plane = s.oh * s.ow;
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t co = 0; co < s.cout; ++co) {
      T* o = out.data() + (b * s.cout + co) * out_plane;
      for (std::size_t ci = 0; ci < s.cin; ++ci) {
        const T* in = input.data() + (b * s.cin + ci) * in_plane;
        const T* wk = weight.data() + (co * s.cin + ci) * s.kh * s.kw;
        for (std::size_t ki = 0; ki < s.kh; ++ki) {
          for (std::size_t kj = 0; kj < s.kw; ++kj) {
            accumulate_tap(o, in, wk[ki * s.kw + kj], s, options, ki, kj);
          }
        }
      }
    }
  }
  if (bias != nullptr) add_channel_bias(out, *bias);
  return out;
}

template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                const BasicTensor<T>* bias, const Conv2dOptions& options) {
  const ConvShape s = check_conv(input.shape(), weight.shape(), options, true);
  if (bias != nullptr) require_vector(bias->shape(), s.cout, "depthwise_conv2d bias");
  BasicTensor<T> out({s.batch, s.cout, s.oh, s.ow});
  cost::add_macs(static_cast<std::uint64_t>(s.batch) * s.cout * s.oh * s.ow * s.kh * s.kw);
  if (bias != nullptr) cost::add_other(out.size());
  if (cost::dry_run()) return out;

  const std::size_t in_plane = s.h * s.w;
  const std::size_t out_plane = s.oh * s.ow;
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t c = 0; c < s.cout; ++c) {
      T* o = out.data() + (b * s.cout + c) * out_plane;
      const T* in = input.data() + (b * s.cin + c) * in_plane;
      const T* wk = weight.data() + c * s.kh * s.kw;
      for (std::size_t ki = 0; ki < s.kh; ++ki) {
        for (std::size_t kj = 0; kj < s.kw; ++kj) {
          accumulate_tap(o, in, wk[ki * s.kw + kj], s, options, ki, kj);
        }
      }
    }
  }
  if (bias != nullptr) add_channel_bias(out, *bias);
  return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const BatchedShape s = check_matmul(a.shape(), b.shape());
  cost::add_macs(static_cast<std::uint64_t>(s.slices) * s.m * s.k * s.n);
  if (cost::dry_run()) {
    Shape out_shape = s.lead;
    out_shape.push_back(s.m);
    out_shape.push_back(s.n);
    return BasicTensor<T>(out_shape);
  }
  return raw_matmul(a, b);
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias) {
  if (x.rank() < 1) throw ShapeError("linear: input must have rank >= 1");
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t din = x.dim(-1);
  const std::size_t dout = weight.dim(1);
  if (weight.dim(0) != din) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  if (bias != nullptr) require_vector(bias->shape(), dout, "linear bias");
  const std::size_t rows = x.size() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  BasicTensor<T> out(out_shape);
  cost::add_macs(static_cast<std::uint64_t>(rows) * din * dout);
  if (bias != nullptr) cost::add_other(out.size());
  if (cost::dry_run()) return out;
  gemm_accumulate(x.data(), weight.data(), out.data(), rows, din, dout);
  if (bias != nullptr) {
    for (std::size_t r = 0; r < rows; ++r) {
      T* o = out.data() + r * dout;
      for (std::size_t j = 0; j < dout; ++j) o[j] += (*bias)[j];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit sp = split_axis(x.shape(), ax);
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t e = 0; e < sp.extent; ++e) mx = std::max(mx, x[base + e * sp.inner]);
      T sum = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const T v = std::exp(x[base + e * sp.inner] - mx);
        out[base + e * sp.inner] = v;
        sum += v;
      }
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= sum;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, double epsilon) {
  require_rank(x.shape(), 4, "instance_norm");
  const std::size_t slices = x.dim(0) * x.dim(1);
  const std::size_t m = x.dim(2) * x.dim(3);
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  for (std::size_t s = 0; s < slices; ++s) {
    const T* p = x.data() + s * m;
    T* q = out.data() + s * m;
    T mean = 0;
    for (std::size_t i = 0; i < m; ++i) mean += p[i];
    mean /= static_cast<T>(m);
    T var = 0;
    for (std::size_t i = 0; i < m; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<T>(m);
    const T denom = var + static_cast<T>(epsilon);
    if (!(denom > 0)) {
      std::fill(q, q + m, T{0});
      continue;
    }
    const T inv = static_cast<T>(1) / std::sqrt(denom);
    for (std::size_t i = 0; i < m; ++i) q[i] = (p[i] - mean) * inv;
  }
  return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double epsilon) {
  if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
  const std::size_t d = x.dim(-1);
  require_vector(gamma.shape(), d, "layer_norm gamma");
  require_vector(beta.shape(), d, "layer_norm beta");
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  const std::size_t rows = x.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * d;
    T* q = out.data() + r * d;
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += p[i];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<T>(d);
    const T denom = var + static_cast<T>(epsilon);
    const T inv = denom > 0 ? static_cast<T>(1) / std::sqrt(denom) : T{0};
    for (std::size_t i = 0; i < d; ++i) q[i] = (p[i] - mean) * inv * gamma[i] + beta[i];
  }
  return out;
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& mean,
                          const BasicTensor<T>& var, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double epsilon) {
  require_rank(x.shape(), 4, "batch_norm");
  const std::size_t c = x.dim(1);
  require_vector(mean.shape(), c, "batch_norm mean");
  require_vector(var.shape(), c, "batch_norm var");
  require_vector(gamma.shape(), c, "batch_norm gamma");
  require_vector(beta.shape(), c, "batch_norm beta");
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T inv = static_cast<T>(1) / std::sqrt(var[ch] + static_cast<T>(epsilon));
      const T* p = x.data() + (b * c + ch) * plane;
      T* q = out.data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mean[ch]) * inv * gamma[ch] + beta[ch];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = erf_gelu(x[i]);
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? x[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = stable_sigmoid(x[i]);
  return out;
}

template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, const Pool2dOptions& options) {
  const PoolShape s = check_pool(x.shape(), options, "avg_pool2d");
  BasicTensor<T> out({s.batch, s.channels, s.oh, s.ow});
  cost::add_other(out.size() * options.kernel.h * options.kernel.w);
  if (cost::dry_run()) return out;
  for (std::size_t bc = 0; bc < s.batch * s.channels; ++bc) {
    const T* p = x.data() + bc * s.h * s.w;
    T* q = out.data() + bc * s.oh * s.ow;
    for (std::size_t r = 0; r < s.oh; ++r) {
      for (std::size_t c = 0; c < s.ow; ++c) {
        const Window win = clip_window(s, options, r, c);
        T sum = 0;
        for (std::size_t i = win.r0; i < win.r1; ++i) {
          for (std::size_t j = win.c0; j < win.c1; ++j) sum += p[i * s.w + j];
        }
        q[r * s.ow + c] = sum / static_cast<T>((win.r1 - win.r0) * (win.c1 - win.c0));
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, const Pool2dOptions& options) {
  const PoolShape s = check_pool(x.shape(), options, "max_pool2d");
  BasicTensor<T> out({s.batch, s.channels, s.oh, s.ow});
  cost::add_other(out.size() * options.kernel.h * options.kernel.w);
  if (cost::dry_run()) return out;
  for (std::size_t bc = 0; bc < s.batch * s.channels; ++bc) {
    const T* p = x.data() + bc * s.h * s.w;
    T* q = out.data() + bc * s.oh * s.ow;
    for (std::size_t r = 0; r < s.oh; ++r) {
      for (std::size_t c = 0; c < s.ow; ++c) {
        const Window win = clip_window(s, options, r, c);
        T best = -std::numeric_limits<T>::infinity();
        for (std::size_t i = win.r0; i < win.r1; ++i) {
          for (std::size_t j = win.c0; j < win.c1; ++j) best = std::max(best, p[i * s.w + j]);
        }
        q[r * s.ow + c] = best;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t plane = x.dim(2) * x.dim(3);
  BasicTensor<T> out({x.dim(0), x.dim(1)});
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  for (std::size_t bc = 0; bc < out.size(); ++bc) {
    T sum = 0;
    const T* p = x.data() + bc * plane;
    for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    out[bc] = sum / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, std::span<const std::size_t> axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axis count differs from rank of " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw ShapeError("permute: invalid axis list");
    seen[axes[i]] = true;
    out_shape[i] = x.shape()[axes[i]];
  }
  BasicTensor<T> out(out_shape);
  if (cost::dry_run()) return out;
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t d = r; d-- > 1;) in_stride[d - 1] = in_stride[d] * x.shape()[d];
  // Stride in the input for each output axis.
  std::size_t st[kMaxRank] = {0, 0, 0, 0};
  std::size_t ext[kMaxRank] = {1, 1, 1, 1};
  const std::size_t pad = kMaxRank - r;
  for (std::size_t i = 0; i < r; ++i) {
    st[pad + i] = in_stride[axes[i]];
    ext[pad + i] = out_shape[i];
  }
  T* o = out.data();
  const T* in = x.data();
  for (std::size_t i0 = 0; i0 < ext[0]; ++i0) {
    for (std::size_t i1 = 0; i1 < ext[1]; ++i1) {
      for (std::size_t i2 = 0; i2 < ext[2]; ++i2) {
        const T* base = in + i0 * st[0] + i1 * st[1] + i2 * st[2];
        for (std::size_t i3 = 0; i3 < ext[3]; ++i3) *o++ = base[i3 * st[3]];
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out(a.shape());
  cost::add_other(a.size());
  if (cost::dry_run()) return out;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out(a.shape());
  cost::add_other(a.size());
  if (cost::dry_run()) return out;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor) {
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  const auto f = static_cast<T>(factor);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * f;
  return out;
}

template <typename T>
BasicTensor<T> add_batch_broadcast(const BasicTensor<T>& x, const BasicTensor<T>& table) {
  if (x.rank() != table.rank() + 1 ||
      !std::equal(table.shape().begin(), table.shape().end(), x.shape().begin() + 1)) {
    throw ShapeError("add_batch_broadcast: table " + to_string(table.shape()) +
                     " does not match per-sample shape of " + to_string(x.shape()));
  }
  BasicTensor<T> out(x.shape());
  cost::add_other(x.size());
  if (cost::dry_run()) return out;
  const std::size_t per = table.size();
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t i = 0; i < per; ++i) out[b * per + i] = x[b * per + i] + table[i];
  }
  return out;
}

#define REST_INSTANTIATE_KERNELS(T)                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>*, const Conv2dOptions&);                  \
  template BasicTensor<T> depthwise_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                           const BasicTensor<T>*, const Conv2dOptions&);        \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>*);                                        \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::ptrdiff_t);                       \
  template BasicTensor<T> instance_norm(const BasicTensor<T>&, double);                         \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                     const BasicTensor<T>&, double);                            \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                     const BasicTensor<T>&, const BasicTensor<T>&,              \
                                     const BasicTensor<T>&, double);                            \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                       \
  template BasicTensor<T> avg_pool2d(const BasicTensor<T>&, const Pool2dOptions&);              \
  template BasicTensor<T> max_pool2d(const BasicTensor<T>&, const Pool2dOptions&);              \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                               \
  template BasicTensor<T> permute(const BasicTensor<T>&, std::span<const std::size_t>);         \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                 \
  template BasicTensor<T> add_batch_broadcast(const BasicTensor<T>&, const BasicTensor<T>&);

REST_INSTANTIATE_KERNELS(float)
REST_INSTANTIATE_KERNELS(double)

#undef REST_INSTANTIATE_KERNELS

// ---------------------------------------------------------------------------
// Backward kernels

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias,
                          const Tensor& grad_out, const Conv2dOptions& options) {
  const ConvShape s = check_conv(input.shape(), weight.shape(), options, false);
  require_same_shape(grad_out.shape(), Shape{s.batch, s.cout, s.oh, s.ow}, "conv2d_backward");
  ConvGrads g{Tensor(input.shape()), Tensor(weight.shape()), {}};
  const auto sh = static_cast<std::ptrdiff_t>(options.stride.h);
  const auto sw = static_cast<std::ptrdiff_t>(options.stride.w);
  const std::size_t in_plane = s.h * s.w;
  const std::size_t out_plane = s.oh * s.ow;
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t co = 0; co < s.cout; ++co) {
      const double* go = grad_out.data() + (b * s.cout + co) * out_plane;
      for (std::size_t ci = 0; ci < s.cin; ++ci) {
        const double* in = input.data() + (b * s.cin + ci) * in_plane;
        double* gi = g.input.data() + (b * s.cin + ci) * in_plane;
        const std::size_t wbase = (co * s.cin + ci) * s.kh * s.kw;
        for (std::size_t ki = 0; ki < s.kh; ++ki) {
          const ValidRange rows = valid_outputs(s.h, s.oh, options.stride.h, ki, options.padding.h);
          const auto row_off = static_cast<std::ptrdiff_t>(ki) - static_cast<std::ptrdiff_t>(options.padding.h);
          for (std::size_t kj = 0; kj < s.kw; ++kj) {
            const ValidRange cols = valid_outputs(s.w, s.ow, options.stride.w, kj, options.padding.w);
            const auto col_off = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(options.padding.w);
            const double wv = weight[wbase + ki * s.kw + kj];
            double gw = 0;
            for (std::ptrdiff_t r = rows.lo; r < rows.hi; ++r) {
              const std::ptrdiff_t irow = (r * sh + row_off) * static_cast<std::ptrdiff_t>(s.w);
              const double* gorow = go + r * static_cast<std::ptrdiff_t>(s.ow);
              for (std::ptrdiff_t c = cols.lo; c < cols.hi; ++c) {
                const std::ptrdiff_t ii = irow + c * sw + col_off;
                gw += gorow[c] * in[ii];
                gi[ii] += wv * gorow[c];
              }
            }
            g.weight[wbase + ki * s.kw + kj] += gw;
          }
        }
      }
    }
  }
  if (has_bias) {
    g.bias = Tensor({s.cout});
    for (std::size_t b = 0; b < s.batch; ++b) {
      for (std::size_t co = 0; co < s.cout; ++co) {
        const double* go = grad_out.data() + (b * s.cout + co) * out_plane;
        double sum = 0;
        for (std::size_t i = 0; i < out_plane; ++i) sum += go[i];
        g.bias[co] += sum;
      }
    }
  }
  return g;
}

ConvGrads depthwise_conv2d_backward(const Tensor& input, const Tensor& weight, bool has_bias,
                                    const Tensor& grad_out, const Conv2dOptions& options) {
  const ConvShape s = check_conv(input.shape(), weight.shape(), options, true);
  require_same_shape(grad_out.shape(), Shape{s.batch, s.cout, s.oh, s.ow},
                     "depthwise_conv2d_backward");
  ConvGrads g{Tensor(input.shape()), Tensor(weight.shape()), {}};
  const auto sh = static_cast<std::ptrdiff_t>(options.stride.h);
  const auto sw = static_cast<std::ptrdiff_t>(options.stride.w);
  const std::size_t in_plane = s.h * s.w;
  const std::size_t out_plane = s.oh * s.ow;
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t c = 0; c < s.cout; ++c) {
      const double* go = grad_out.data() + (b * s.cout + c) * out_plane;
      const double* in = input.data() + (b * s.cin + c) * in_plane;
      double* gi = g.input.data() + (b * s.cin + c) * in_plane;
      for (std::size_t ki = 0; ki < s.kh; ++ki) {
        const ValidRange rows = valid_outputs(s.h, s.oh, options.stride.h, ki, options.padding.h);
        const auto row_off = static_cast<std::ptrdiff_t>(ki) - static_cast<std::ptrdiff_t>(options.padding.h);
        for (std::size_t kj = 0; kj < s.kw; ++kj) {
          const ValidRange cols = valid_outputs(s.w, s.ow, options.stride.w, kj, options.padding.w);
          const auto col_off = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(options.padding.w);
          const double wv = weight[c * s.kh * s.kw + ki * s.kw + kj];
          double gw = 0;
          for (std::ptrdiff_t r = rows.lo; r < rows.hi; ++r) {
            const std::ptrdiff_t irow = (r * sh + row_off) * static_cast<std::ptrdiff_t>(s.w);
            const double* gorow = go + r * static_cast<std::ptrdiff_t>(s.ow);
            for (std::ptrdiff_t col = cols.lo; col < cols.hi; ++col) {
              const std::ptrdiff_t ii = irow + col * sw + col_off;
              gw += gorow[col] * in[ii];
              gi[ii] += wv * gorow[col];
            }
          }
          g.weight[c * s.kh * s.kw + ki * s.kw + kj] += gw;
        }
      }
    }
  }
  if (has_bias) {
    g.bias = Tensor({s.cout});
    for (std::size_t b = 0; b < s.batch; ++b) {
      for (std::size_t c = 0; c < s.cout; ++c) {
        const double* go = grad_out.data() + (b * s.cout + c) * out_plane;
        double sum = 0;
        for (std::size_t i = 0; i < out_plane; ++i) sum += go[i];
        g.bias[c] += sum;
      }
    }
  }
  return g;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out) {
  const BatchedShape s = check_matmul(a.shape(), b.shape());
  Shape out_shape = s.lead;
  out_shape.push_back(s.m);
  out_shape.push_back(s.n);
  require_same_shape(grad_out.shape(), out_shape, "matmul_backward");
  // Full-rank gradients first, then sum over broadcast axes.
  Shape ga_full = s.lead, gb_full = s.lead;
  ga_full.push_back(s.m);
  ga_full.push_back(s.k);
  gb_full.push_back(s.k);
  gb_full.push_back(s.n);
  Tensor ga(ga_full), gb(gb_full);
  const Tensor bt = transpose_last(b);
  const Tensor at = transpose_last(a);
  for (std::size_t idx = 0; idx < s.slices; ++idx) {
    const double* g = grad_out.data() + idx * s.m * s.n;
    gemm_accumulate(g, bt.data() + s.b_offset[idx] * s.n * s.k, ga.data() + idx * s.m * s.k, s.m,
                    s.n, s.k);
    gemm_accumulate(at.data() + s.a_offset[idx] * s.k * s.m, g, gb.data() + idx * s.k * s.n, s.k,
                    s.m, s.n);
  }
  return {reduce_to(ga, a.shape()), reduce_to(gb, b.shape())};
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, bool has_bias,
                            const Tensor& grad_out) {
  const std::size_t din = weight.dim(0);
  const std::size_t dout = weight.dim(1);
  const std::size_t rows = x.size() / din;
  LinearGrads g{Tensor(x.shape()), Tensor(weight.shape()), {}};
  const Tensor wt = transpose_last(weight);
  gemm_accumulate(grad_out.data(), wt.data(), g.input.data(), rows, dout, din);
  const Tensor xt = transpose_last(x.reshape({rows, din}));
  gemm_accumulate(xt.data(), grad_out.data(), g.weight.data(), din, rows, dout);
  if (has_bias) {
    g.bias = Tensor({dout});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < dout; ++j) g.bias[j] += grad_out[r * dout + j];
    }
  }
  return g;
}

Tensor softmax_backward(const Tensor& output, const Tensor& grad_out, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, output.rank());
  const AxisSplit sp = split_axis(output.shape(), ax);
  Tensor gx(output.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double dot = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        dot += output[base + e * sp.inner] * grad_out[base + e * sp.inner];
      }
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const std::size_t k = base + e * sp.inner;
        gx[k] = output[k] * (grad_out[k] - dot);
      }
    }
  }
  return gx;
}

namespace {

// Gradient of standardization y = (x - mean) / sqrt(var + eps) over one
// group of m values, where the group is addressed by `index(i)`.
template <typename Index>
void standardize_backward(const Tensor& x, const Tensor& dy, Tensor& dx, std::size_t m,
                          double epsilon, Index index, const double* dy_scale) {
  double mean = 0;
  for (std::size_t i = 0; i < m; ++i) mean += x[index(i)];
  mean /= static_cast<double>(m);
  double var = 0;
  for (std::size_t i = 0; i < m; ++i) var += (x[index(i)] - mean) * (x[index(i)] - mean);
  var /= static_cast<double>(m);
  const double denom = var + epsilon;
  if (!(denom > 0)) return;
  const double inv = 1.0 / std::sqrt(denom);
  double mean_g = 0, mean_gx = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double g = dy[index(i)] * (dy_scale ? dy_scale[i] : 1.0);
    const double xh = (x[index(i)] - mean) * inv;
    mean_g += g;
    mean_gx += g * xh;
  }
  mean_g /= static_cast<double>(m);
  mean_gx /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double g = dy[index(i)] * (dy_scale ? dy_scale[i] : 1.0);
    const double xh = (x[index(i)] - mean) * inv;
    dx[index(i)] += inv * (g - mean_g - xh * mean_gx);
  }
}

}  // namespace

Tensor instance_norm_backward(const Tensor& x, const Tensor& grad_out, double epsilon) {
  require_rank(x.shape(), 4, "instance_norm_backward");
  const std::size_t m = x.dim(2) * x.dim(3);
  Tensor gx(x.shape());
  for (std::size_t s = 0; s < x.dim(0) * x.dim(1); ++s) {
    standardize_backward(x, grad_out, gx, m, epsilon, [&](std::size_t i) { return s * m + i; },
                         nullptr);
  }
  return gx;
}

NormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& grad_out,
                              double epsilon) {
  const std::size_t d = x.dim(-1);
  const std::size_t rows = x.size() / d;
  NormGrads g{Tensor(x.shape()), Tensor({d}), Tensor({d})};
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = x.data() + r * d;
    double mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += p[i];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(d);
    const double denom = var + epsilon;
    const double inv = denom > 0 ? 1.0 / std::sqrt(denom) : 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      g.gamma[i] += grad_out[r * d + i] * (p[i] - mean) * inv;
      g.beta[i] += grad_out[r * d + i];
    }
    standardize_backward(x, grad_out, g.input, d, epsilon, [&](std::size_t i) { return r * d + i; },
                         gamma.data());
  }
  return g;
}

NormGrads batch_norm_backward(const Tensor& x, const Tensor& mean, const Tensor& var,
                              const Tensor& gamma, const Tensor& grad_out, double epsilon) {
  const std::size_t c = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  NormGrads g{Tensor(x.shape()), Tensor({c}), Tensor({c})};
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double inv = 1.0 / std::sqrt(var[ch] + epsilon);
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = (b * c + ch) * plane + i;
        g.input[k] = grad_out[k] * gamma[ch] * inv;
        g.gamma[ch] += grad_out[k] * (x[k] - mean[ch]) * inv;
        g.beta[ch] += grad_out[k];
      }
    }
  }
  return g;
}

BatchNormTrainResult batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                      double epsilon) {
  require_rank(x.shape(), 4, "batch_norm_train");
  const std::size_t batch = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  require_vector(gamma.shape(), c, "batch_norm gamma");
  require_vector(beta.shape(), c, "batch_norm beta");
  BatchNormTrainResult r{Tensor(x.shape()), Tensor({c}), Tensor({c})};
  cost::add_other(x.size());
  if (cost::dry_run()) return r;
  const double m = static_cast<double>(batch * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* p = x.data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    }
    mean /= m;
    double var = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* p = x.data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    var /= m;
    r.mean[ch] = mean;
    r.var[ch] = var;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* p = x.data() + (b * c + ch) * plane;
      double* q = r.output.data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mean) * inv * gamma[ch] + beta[ch];
    }
  }
  return r;
}

NormGrads batch_norm_train_backward(const Tensor& x, const Tensor& gamma, const Tensor& grad_out,
                                    double epsilon) {
  const std::size_t batch = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const std::size_t m = batch * plane;
  NormGrads g{Tensor(x.shape()), Tensor({c}), Tensor({c})};
  std::vector<double> scale_vec(m);
  for (std::size_t ch = 0; ch < c; ++ch) {
    auto index = [&](std::size_t i) { return ((i / plane) * c + ch) * plane + i % plane; };
    double mean = 0;
    for (std::size_t i = 0; i < m; ++i) mean += x[index(i)];
    mean /= static_cast<double>(m);
    double var = 0;
    for (std::size_t i = 0; i < m; ++i) var += (x[index(i)] - mean) * (x[index(i)] - mean);
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t i = 0; i < m; ++i) {
      g.gamma[ch] += grad_out[index(i)] * (x[index(i)] - mean) * inv;
      g.beta[ch] += grad_out[index(i)];
    }
    std::fill(scale_vec.begin(), scale_vec.end(), gamma[ch]);
    standardize_backward(x, grad_out, g.input, m, epsilon, index, scale_vec.data());
  }
  return g;
}

Tensor gelu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor gx(x.shape());
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    gx[i] = grad_out[i] * (cdf + v * pdf);
  }
  return gx;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0 ? grad_out[i] : 0.0;
  return gx;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
  Tensor gx(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) {
    gx[i] = grad_out[i] * output[i] * (1.0 - output[i]);
  }
  return gx;
}

Tensor avg_pool2d_backward(const Shape& input_shape, const Tensor& grad_out,
                           const Pool2dOptions& options) {
  const PoolShape s = check_pool(input_shape, options, "avg_pool2d_backward");
  Tensor gx(input_shape);
  for (std::size_t bc = 0; bc < s.batch * s.channels; ++bc) {
    double* q = gx.data() + bc * s.h * s.w;
    const double* g = grad_out.data() + bc * s.oh * s.ow;
    for (std::size_t r = 0; r < s.oh; ++r) {
      for (std::size_t c = 0; c < s.ow; ++c) {
        const Window win = clip_window(s, options, r, c);
        const double share =
            g[r * s.ow + c] / static_cast<double>((win.r1 - win.r0) * (win.c1 - win.c0));
        for (std::size_t i = win.r0; i < win.r1; ++i) {
          for (std::size_t j = win.c0; j < win.c1; ++j) q[i * s.w + j] += share;
        }
      }
    }
  }
  return gx;
}

Tensor max_pool2d_backward(const Tensor& x, const Tensor& grad_out, const Pool2dOptions& options) {
  const PoolShape s = check_pool(x.shape(), options, "max_pool2d_backward");
  Tensor gx(x.shape());
  for (std::size_t bc = 0; bc < s.batch * s.channels; ++bc) {
    const double* p = x.data() + bc * s.h * s.w;
    double* q = gx.data() + bc * s.h * s.w;
    const double* g = grad_out.data() + bc * s.oh * s.ow;
    for (std::size_t r = 0; r < s.oh; ++r) {
      for (std::size_t c = 0; c < s.ow; ++c) {
        const Window win = clip_window(s, options, r, c);
        std::size_t best = win.r0 * s.w + win.c0;
        for (std::size_t i = win.r0; i < win.r1; ++i) {
          for (std::size_t j = win.c0; j < win.c1; ++j) {
            if (p[i * s.w + j] > p[best]) best = i * s.w + j;
          }
        }
        q[best] += g[r * s.ow + c];
      }
    }
  }
  return gx;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  Tensor gx(input_shape);
  const std::size_t plane = input_shape[2] * input_shape[3];
  for (std::size_t bc = 0; bc < grad_out.size(); ++bc) {
    const double share = grad_out[bc] / static_cast<double>(plane);
    double* q = gx.data() + bc * plane;
    for (std::size_t i = 0; i < plane; ++i) q[i] = share;
  }
  return gx;
}

Tensor permute_backward(const Tensor& grad_out, std::span<const std::size_t> axes) {
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
  return permute(grad_out, inverse);
}

}  // namespace rest
