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

#ifndef CQIL_TENSOR_HPP_
#define CQIL_TENSOR_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cqil {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f32 tensor. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape);
  // Throws ShapeError unless product(shape) == data.size().
  Tensor(Shape shape, std::vector<float> data);

  static Tensor filled(Shape shape, float value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  // Contiguous slice [begin, end) along axis 0.
  Tensor rows(std::size_t begin, std::size_t end) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Shapes equal and every element has the same bit pattern.
bool bit_equal(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);

// Throws NumericError naming `what` if any element is NaN or Inf.
void check_finite(const Tensor& t, std::string_view what);

// c[m x n] = a[m x k] * b[k x n]. Every output element accumulates its k
// products in ascending k order starting from +0, whatever the blocking.
void matmul_into(std::span<const float> a, std::span<const float> b,
                 std::span<float> c, std::size_t m, std::size_t k,
                 std::size_t n);

// a may have any rank >= 1; its last axis is contracted with the rows of the
// rank-2 b. Leading axes of a are kept: [..., k] x [k, n] -> [..., n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& m);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& acc, const Tensor& b);
// acc[r, :] += bias for every row r of the last axis.
void add_row_bias(Tensor& acc, const Tensor& bias);

// In-place max-subtracted softmax of one contiguous vector.
void softmax_inplace(std::span<float> v);
Tensor softmax(const Tensor& v, std::size_t axis);

// y = x * gain / sqrt(mean(x^2) + eps) over the last axis. If the
// denominator is exactly zero (zero row with eps == 0) the row maps to zero.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, float eps);

enum class Activation { kGelu, kSilu, kRelu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);
// gelu uses the tanh approximation.
float activate(float x, Activation kind);
Tensor activation(const Tensor& x, Activation kind);
void activation_inplace(Tensor& x, Activation kind);

// a.b / (|a| |b|), accumulated in double and clamped to [-1, 1].
// Throws NumericError when either vector has zero norm.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace cqil

#endif  // CQIL_TENSOR_HPP_
