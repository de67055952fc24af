#include "reasonlens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <vector>

#if defined(__AVX__)
#include <immintrin.h>
#endif

#include "reasonlens/errors.hpp"

namespace reasonlens {
namespace {

std::size_t product(const Tensor::Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected rank-2 tensor, got " +
                         t.shape_string());
  }
}

// Register-blocked GEMM: kMR x kNR tiles of C live in registers while a
// kKC-deep slice of A and B streams through. Every output element is summed
// in the same order regardless of m, so a single row reproduces the matching
// row of a larger product bit for bit.
#if defined(__AVX512F__)
constexpr std::size_t kLanes = 16;
#else
constexpr std::size_t kLanes = 8;
#endif
constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 2 * kLanes;
constexpr std::size_t kKC = 256;
constexpr std::size_t kNC = 1024;

typedef float vec __attribute__((vector_size(kLanes * sizeof(float))));

inline vec load_vec(const float* p) {
  vec v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

inline vec broadcast(float x) {
#if defined(__AVX512F__)
  return _mm512_set1_ps(x);
#elif defined(__AVX__)
  return _mm256_set1_ps(x);
#else
  vec v;
  for (std::size_t i = 0; i < kLanes; ++i) v[i] = x;
  return v;
#endif
}

inline vec madd(vec a, vec b, vec c) {
#if defined(__AVX512F__)
  return _mm512_fmadd_ps(a, b, c);
#elif defined(__FMA__)
  return _mm256_fmadd_ps(a, b, c);
#else
  return a * b + c;
#endif
}

inline float madd(float a, float b, float c) {
#if defined(__FMA__) || defined(__AVX512F__)
  return std::fma(a, b, c);
#else
  return a * b + c;
#endif
}

template <std::size_t R>
void micro_kernel_rows(const float* a, std::size_t lda, const float* b, std::size_t ldb,
                       std::size_t kc, float* c, std::size_t ldc, std::size_t width) {
  vec acc[R][2] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const vec b0 = load_vec(b + p * ldb);
    const vec b1 = load_vec(b + p * ldb + kLanes);
    for (std::size_t r = 0; r < R; ++r) {
      const vec ar = broadcast(a[r * lda + p]);
      acc[r][0] = madd(ar, b0, acc[r][0]);
      acc[r][1] = madd(ar, b1, acc[r][1]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    float tile[kNR];
    __builtin_memcpy(tile, &acc[r][0], sizeof(vec));
    __builtin_memcpy(tile + kLanes, &acc[r][1], sizeof(vec));
    float* row = c + r * ldc;
    for (std::size_t j = 0; j < width; ++j) row[j] += tile[j];
  }
}

void micro_kernel(std::size_t rows, const float* a, std::size_t lda, const float* b,
                  std::size_t ldb, std::size_t kc, float* c, std::size_t ldc,
                  std::size_t width) {
  switch (rows) {
    case 1: return micro_kernel_rows<1>(a, lda, b, ldb, kc, c, ldc, width);
    case 2: return micro_kernel_rows<2>(a, lda, b, ldb, kc, c, ldc, width);
    case 3: return micro_kernel_rows<3>(a, lda, b, ldb, kc, c, ldc, width);
    case 4: return micro_kernel_rows<4>(a, lda, b, ldb, kc, c, ldc, width);
    case 5: return micro_kernel_rows<5>(a, lda, b, ldb, kc, c, ldc, width);
    default: return micro_kernel_rows<6>(a, lda, b, ldb, kc, c, ldc, width);
  }
}

// Few rows: B is streamed row by row instead of packed. Each output element
// still sees the same sequence of fused multiply-adds as in micro_kernel.
void stream_rows(std::size_t m, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 std::size_t kc, float* c, std::size_t ldc, std::size_t width) {
  thread_local std::vector<float> acc;
  acc.assign(m * width, 0.0f);
  const std::size_t body = width - width % kLanes;
  for (std::size_t p = 0; p < kc; ++p) {
    const float* bp = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const float x = a[i * lda + p];
      const vec xv = broadcast(x);
      float* row = acc.data() + i * width;
      for (std::size_t j = 0; j < body; j += kLanes) {
        const vec r = madd(xv, load_vec(bp + j), load_vec(row + j));
        __builtin_memcpy(row + j, &r, sizeof r);
      }
      for (std::size_t j = body; j < width; ++j) row[j] = madd(x, bp[j], row[j]);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < width; ++j) c[i * ldc + j] += acc[i * width + j];
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(product(shape_), 0.0f) {
  if (shape_.empty() || shape_.size() > 3) {
    throw DimensionError("tensor rank must be 1..3");
  }
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > 3) {
    throw DimensionError("tensor rank must be 1..3");
  }
  if (product(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string() + " does not match " +
                         std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::vector<float> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string());
  }
  return shape_[axis];
}

std::span<float> Tensor::row(std::size_t r) {
  const std::size_t n = shape_.back();
  return std::span<float>(data_).subspan(r * n, n);
}

std::span<const float> Tensor::row(std::size_t r) const {
  const std::size_t n = shape_.back();
  return std::span<const float>(data_).subspan(r * n, n);
}

Tensor Tensor::row_copy(std::size_t r) const {
  auto src = row(r);
  return Tensor({src.size()}, std::vector<float>(src.begin(), src.end()));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

namespace kernels {

void gemm_accumulate(const float* a, const float* b, float* out, std::size_t m,
                     std::size_t k, std::size_t n) {
  if (m == 0 || n == 0 || k == 0) return;
  const bool pack = m >= kMR;
  thread_local std::vector<float> packed;
  for (std::size_t j0 = 0; j0 < n; j0 += kNC) {
    const std::size_t nc = std::min(kNC, n - j0);
    const std::size_t panels = (nc + kNR - 1) / kNR;
    for (std::size_t p0 = 0; p0 < k; p0 += kKC) {
      const std::size_t kc = std::min(kKC, k - p0);
      const float* a_block = a + p0;
      if (pack) {
        packed.assign(panels * kc * kNR, 0.0f);
        for (std::size_t q = 0; q < panels; ++q) {
          const std::size_t width = std::min(kNR, nc - q * kNR);
          float* dst = packed.data() + q * kc * kNR;
          for (std::size_t p = 0; p < kc; ++p) {
            std::copy_n(b + (p0 + p) * n + j0 + q * kNR, width, dst + p * kNR);
          }
        }
        for (std::size_t i0 = 0; i0 < m; i0 += kMR) {
          const std::size_t rows = std::min(kMR, m - i0);
          for (std::size_t q = 0; q < panels; ++q) {
            micro_kernel(rows, a_block + i0 * k, k, packed.data() + q * kc * kNR, kNR, kc,
                         out + i0 * n + j0 + q * kNR, n, std::min(kNR, nc - q * kNR));
          }
        }
      } else {
        stream_rows(m, a_block, k, b + p0 * n + j0, n, kc, out + j0, n, nc);
      }
    }
  }
}

void gemm(const float* a, const float* b, float* out, std::size_t m, std::size_t k,
          std::size_t n) {
  std::fill(out, out + m * n, 0.0f);
  gemm_accumulate(a, b, out, m, k, n);
}

void softmax_row(std::span<float> row) {
  if (row.empty()) return;
  const float mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (float& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const float inv = static_cast<float>(1.0 / sum);
  for (float& v : row) v *= inv;
}

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  Tensor out({a.rows(), b.cols()});
  kernels::gemm_accumulate(a.raw(), b.raw(), out.raw(), a.rows(), a.cols(), b.cols());
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_transposed");
  require_rank2(b, "matmul_transposed");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_transposed: " + a.shape_string() + " x " +
                         b.shape_string() + "^T");
  }
  const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a.raw() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float* br = b.raw() + j * k;
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out.at(i, j) = acc;
    }
  }
  return out;
}

Tensor row_softmax(const Tensor& x) {
  Tensor out = x;
  if (out.rank() == 1) {
    kernels::softmax_row(out.data());
    return out;
  }
  require_rank2(out, "row_softmax");
  for (std::size_t r = 0; r < out.rows(); ++r) kernels::softmax_row(out.row(r));
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const std::size_t d = x.shape().back();
  const bool affine = !gain.empty();
  if (affine && (gain.size() != d || bias.size() != d)) {
    throw DimensionError("layer_norm: gain/bias length does not match " +
                         x.shape_string());
  }
  Tensor out = x;
  const std::size_t rows = out.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    float* v = out.raw() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += v[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = v[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const float n = static_cast<float>((v[i] - mean) * inv);
      v[i] = affine ? n * gain[i] + bias[i] : n;
    }
  }
  return out;
}

float gelu(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data()) v = gelu(v);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + a.shape_string() + " vs " + b.shape_string());
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void add_row_inplace(Tensor& a, std::span<const float> row) {
  const std::size_t n = a.shape().back();
  if (row.size() != n) {
    throw DimensionError("add_row: row of " + std::to_string(row.size()) +
                         " vs " + a.shape_string());
  }
  for (std::size_t r = 0; r < a.size() / n; ++r) {
    float* dst = a.raw() + r * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] += row[j];
  }
}

Tensor scale(const Tensor& a, float s) {
  Tensor out = a;
  for (float& v : out.data()) v *= s;
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

}  // namespace reasonlens
