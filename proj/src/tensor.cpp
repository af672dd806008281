#include "nna/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "nna/errors.hpp"

namespace nna {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on rank-" + std::to_string(rank()) + " tensor");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on rank-" + std::to_string(rank()) + " tensor");
  return shape_[1];
}

std::span<double> Tensor::row(std::size_t r) {
  const auto c = cols();
  return {data_.data() + r * c, c};
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return {data_.data() + r * c, c};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

namespace {

// C[m x n] += A[m x k] * B[k x n], all row-major. Every output element is
// accumulated over p in increasing order, so the tiling below gives results
// bit-identical to the plain triple loop. A 4 x 8 tile of C stays in registers
// while p runs over the full inner dimension.
#if defined(__AVX__)
using Lane = double __attribute__((vector_size(32)));
#else
using Lane = double __attribute__((vector_size(16)));
#endif
constexpr std::size_t kLane = sizeof(Lane) / sizeof(double);
constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 2 * kLane;

Lane load_lane(const double* p) {
  Lane v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

void store_lane(double* p, Lane v) { std::memcpy(p, &v, sizeof v); }

void gemm_tile(const double* __restrict pa, const double* __restrict pb, double* __restrict pc, std::size_t k,
               std::size_t n, std::size_t i, std::size_t j) {
  double* c0 = pc + i * n + j;
  Lane a00 = load_lane(c0), a01 = load_lane(c0 + kLane);
  Lane a10 = load_lane(c0 + n), a11 = load_lane(c0 + n + kLane);
  Lane a20 = load_lane(c0 + 2 * n), a21 = load_lane(c0 + 2 * n + kLane);
  Lane a30 = load_lane(c0 + 3 * n), a31 = load_lane(c0 + 3 * n + kLane);
  const double* r0 = pa + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const Lane b0 = load_lane(pb + p * n + j), b1 = load_lane(pb + p * n + j + kLane);
    const double v0 = r0[p], v1 = r0[k + p], v2 = r0[2 * k + p], v3 = r0[3 * k + p];
    a00 += v0 * b0;
    a01 += v0 * b1;
    a10 += v1 * b0;
    a11 += v1 * b1;
    a20 += v2 * b0;
    a21 += v2 * b1;
    a30 += v3 * b0;
    a31 += v3 * b1;
  }
  store_lane(c0, a00);
  store_lane(c0 + kLane, a01);
  store_lane(c0 + n, a10);
  store_lane(c0 + n + kLane, a11);
  store_lane(c0 + 2 * n, a20);
  store_lane(c0 + 2 * n + kLane, a21);
  store_lane(c0 + 3 * n, a30);
  store_lane(c0 + 3 * n + kLane, a31);
}

void gemm_edge(const double* pa, const double* pb, double* pc, std::size_t k, std::size_t n, std::size_t i0,
               std::size_t i1, std::size_t j0, std::size_t j1) {
  for (std::size_t i = i0; i < i1; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      for (std::size_t j = j0; j < j1; ++j) pc[i * n + j] += av * pb[p * n + j];
    }
}

void gemm_rows(const double* pa, const double* pb, double* pc, std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t m_full = m - m % kTileRows, n_full = n - n % kTileCols;
  for (std::size_t i = 0; i < m_full; i += kTileRows)
    for (std::size_t j = 0; j < n_full; j += kTileCols) gemm_tile(pa, pb, pc, k, n, i, j);
  gemm_edge(pa, pb, pc, k, n, 0, m_full, n_full, n);
  gemm_edge(pa, pb, pc, k, n, m_full, m, 0, n);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  gemm_rows(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose of rank-" + std::to_string(a.rank()) + " tensor");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_string(a.shape()) + " * " + shape_string(b.shape()) + "^T");
  }
  return matmul(a, transpose(b));
}

void matmul_tn_accumulate(const Tensor& a, const Tensor& b, Tensor& out) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() || out.rank() != 2 ||
      out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ShapeError("matmul_tn: " + shape_string(a.shape()) + "^T * " + shape_string(b.shape()) + " -> " +
                     shape_string(out.shape()));
  }
  // out[i][j] += sum_p a[p][i] * b[p][j], accumulated in increasing p.
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  const Tensor at = transpose(a);
  gemm_rows(at.data(), b.data(), out.data(), m, k, n);
}

Tensor hconcat(const Tensor& left, const Tensor& right) {
  if (left.rank() != 2 || right.rank() != 2 || left.rows() != right.rows()) {
    throw ShapeError("hconcat: " + shape_string(left.shape()) + " | " + shape_string(right.shape()));
  }
  const std::size_t m = left.rows(), nl = left.cols(), nr = right.cols();
  Tensor out({m, nl + nr});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(left.data() + i * nl, nl, out.data() + i * (nl + nr));
    std::copy_n(right.data() + i * nr, nr, out.data() + i * (nl + nr) + nl);
  }
  return out;
}

void add_inplace(Tensor& target, const Tensor& other) {
  require_same_shape(target, other, "add");
  for (std::size_t i = 0; i < target.size(); ++i) target[i] += other[i];
}

void scale_inplace(Tensor& target, double factor) {
  for (auto& v : target.values()) v *= factor;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

double sum_of_squares(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return s;
}

}  // namespace nna
