/* Copyright 2026 The CQIL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cqil/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "cqil/errors.hpp"

namespace cqil {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw ShapeError("row slice [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of range for " +
                     shape_str(shape_));
  }
  const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  return Tensor(std::move(out_shape),
                std::vector<float>(data_.begin() + begin * stride,
                                   data_.begin() + end * stride));
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::fabs(a[i] - b[i]));
  }
  return m;
}

void check_finite(const Tensor& t, std::string_view what) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError(std::string(what) + ": non-finite value at index " +
                         std::to_string(i));
    }
  }
}

void matmul_into(std::span<const float> a, std::span<const float> b,
                 std::span<float> c, std::size_t m, std::size_t k,
                 std::size_t n) {
  if (a.size() != m * k || b.size() != k * n || c.size() != m * n) {
    throw ShapeError("matmul_into: buffer sizes do not match m/k/n");
  }
  std::fill(c.begin(), c.end(), 0.0f);
  // Blocking over columns and rows only reorders independent outputs; the
  // k-blocks are visited in ascending order, so each output still sums its
  // products in ascending k.
  constexpr std::size_t kColBlock = 512;
  constexpr std::size_t kDepthBlock = 128;
  const float* ap = a.data();
  const float* bp = b.data();
  float* cp = c.data();
  for (std::size_t k0 = 0; k0 < k; k0 += kDepthBlock) {
    const std::size_t k1 = std::min(k, k0 + kDepthBlock);
    for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
      const std::size_t j1 = std::min(n, j0 + kColBlock);
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        float* c0 = cp + i * n;
        float* c1 = c0 + n;
        float* c2 = c1 + n;
        float* c3 = c2 + n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const float* br = bp + kk * n;
          const float a0 = ap[i * k + kk];
          const float a1 = ap[(i + 1) * k + kk];
          const float a2 = ap[(i + 2) * k + kk];
          const float a3 = ap[(i + 3) * k + kk];
          for (std::size_t j = j0; j < j1; ++j) {
            const float bv = br[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < m; ++i) {
        float* ci = cp + i * n;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const float* br = bp + kk * n;
          const float av = ap[i * k + kk];
          for (std::size_t j = j0; j < j1; ++j) ci[j] += av * br[j];
        }
      }
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  const std::size_t m = k ? a.numel() / k : 0;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out(std::move(out_shape));
  matmul_into(a.data(), b.data(), out.data(), m, k, n);
  return out;
}

Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) {
    throw ShapeError("transpose: expected rank 2, got " +
                     shape_str(m.shape()));
  }
  const std::size_t r = m.dim(0);
  const std::size_t c = m.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m[i * c + j];
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Tensor& acc, const Tensor& b) {
  if (acc.shape() != b.shape()) {
    throw ShapeError("add: " + shape_str(acc.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  float* ap = acc.ptr();
  const float* bp = b.ptr();
  for (std::size_t i = 0; i < acc.numel(); ++i) ap[i] += bp[i];
}

void add_row_bias(Tensor& acc, const Tensor& bias) {
  if (acc.rank() < 1 || bias.rank() != 1 ||
      acc.shape().back() != bias.dim(0)) {
    throw ShapeError("add_row_bias: " + shape_str(acc.shape()) + " + " +
                     shape_str(bias.shape()));
  }
  const std::size_t n = bias.dim(0);
  float* ap = acc.ptr();
  for (std::size_t r = 0; n && r < acc.numel() / n; ++r) {
    for (std::size_t j = 0; j < n; ++j) ap[r * n + j] += bias[j];
  }
}

void softmax_inplace(std::span<float> v) {
  if (v.empty()) throw ShapeError("softmax over an empty axis");
  float mx = v[0];
  for (float x : v) mx = std::max(mx, x);
  float sum = 0.0f;
  for (float& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  const float inv = 1.0f / sum;
  for (float& x : v) x *= inv;
}

Tensor softmax(const Tensor& v, std::size_t axis) {
  if (axis >= v.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " invalid for " + shape_str(v.shape()));
  }
  const std::size_t len = v.dim(axis);
  if (len == 0) throw ShapeError("softmax over an empty axis");
  check_finite(v, "softmax input");
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < v.rank(); ++i) inner *= v.dim(i);
  const std::size_t outer = v.numel() / (len * inner);

  Tensor out = v;
  std::vector<float> lane(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      for (std::size_t i = 0; i < len; ++i) lane[i] = out[base + i * inner];
      softmax_inplace(lane);
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] = lane[i];
    }
  }
  return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, float eps) {
  if (eps < 0.0f) throw ShapeError("rmsnorm: eps must be non-negative");
  if (x.rank() < 1 || gain.rank() != 1 || x.shape().back() != gain.dim(0)) {
    throw ShapeError("rmsnorm: " + shape_str(x.shape()) + " with gain " +
                     shape_str(gain.shape()));
  }
  const std::size_t h = gain.dim(0);
  Tensor out(x.shape());
  if (h == 0) return out;
  const std::size_t rows = x.numel() / h;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.ptr() + r * h;
    float* yr = out.ptr() + r * h;
    float ss = 0.0f;
    for (std::size_t i = 0; i < h; ++i) ss += xr[i] * xr[i];
    const float denom = std::sqrt(ss / static_cast<float>(h) + eps);
    if (denom == 0.0f) continue;
    const float inv = 1.0f / denom;
    for (std::size_t i = 0; i < h; ++i) yr[i] = xr[i] * inv * gain[i];
  }
  return out;
}

Activation parse_activation(std::string_view name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "silu") return Activation::kSilu;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kGelu:
      return "gelu";
    case Activation::kSilu:
      return "silu";
    case Activation::kRelu:
      return "relu";
  }
  return "unknown";
}

float activate(float x, Activation kind) {
  switch (kind) {
    case Activation::kGelu: {
      constexpr float kSqrt2OverPi = 0.7978845608028654f;
      const float inner = kSqrt2OverPi * (x + 0.044715f * x * x * x);
      return 0.5f * x * (1.0f + std::tanh(inner));
    }
    case Activation::kSilu:
      return x / (1.0f + std::exp(-x));
    case Activation::kRelu:
      return x > 0.0f ? x : 0.0f;
  }
  throw ConfigError("unknown activation kind");
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out = x;
  activation_inplace(out, kind);
  return out;
}

void activation_inplace(Tensor& x, Activation kind) {
  for (float& v : x.data()) v = activate(v, kind);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_similarity: length " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw NumericError("cosine_similarity: zero-norm input");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace cqil
