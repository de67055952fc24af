#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace reasonlens {

// Dense row-major float32 array of rank 1..3.
//
// Invariant: product(shape) == data.size(). Tensors are plain values; copies
// are deep.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, float value);
  // Builds an m x n tensor from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor vector(std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 conveniences.
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  // Row r of a rank-2 tensor.
  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;
  // Copy of row r as a rank-1 tensor.
  Tensor row_copy(std::size_t r) const;

  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// a[m x k] * b[k x n]. Throws DimensionError when the inner extents differ.
Tensor matmul(const Tensor& a, const Tensor& b);

// a[m x k] * transpose(b[n x k]) -> [m x n].
Tensor matmul_transposed(const Tensor& a, const Tensor& b);

// Numerically stable softmax over each row of a rank-2 tensor (or the single
// row of a rank-1 tensor).
Tensor row_softmax(const Tensor& x);

// Per-row (x - mean) / sqrt(var + eps) * gain + bias. Passing empty gain and
// bias tensors gives the affine-free normalization used by processed models.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);

// GPT-2 GELU (tanh approximation), elementwise.
Tensor gelu(const Tensor& x);
float gelu(float x);

// Elementwise a + b for equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
// Adds a length-n vector to every row of an m x n tensor.
void add_row_inplace(Tensor& a, std::span<const float> row);
Tensor scale(const Tensor& a, float s);
Tensor transpose(const Tensor& a);

// Raw kernels operating on caller-owned buffers (row-major).
namespace kernels {

// out[m x n] += a[m x k] * b[k x n]
void gemm_accumulate(const float* a, const float* b, float* out, std::size_t m,
                     std::size_t k, std::size_t n);
// out[m x n] = a[m x k] * b[k x n]
void gemm(const float* a, const float* b, float* out, std::size_t m,
          std::size_t k, std::size_t n);
// In-place softmax of a contiguous row.
void softmax_row(std::span<float> row);

}  // namespace kernels

}  // namespace reasonlens
