// SPDX-License-Identifier: Apache-2.0
#include "tbvad/kernels.hpp"

#include <cmath>
#include <stdexcept>

#include "tbvad/error.hpp"

namespace tbvad {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> init) {
  rows_ = init.size();
  cols_ = rows_ ? init.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto &r : init) {
    if (r.size() != cols_)
      throw ValidationError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row(std::span<const double> values) {
  Matrix m(1, values.size());
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v))
      return false;
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] += alpha * x[i];
}

namespace kernels {

namespace {

void check(bool ok, const char *op) {
  if (!ok)
    throw ValidationError(std::string("dimension mismatch in ") + op);
}

bool go_parallel(std::size_t work) { return work >= kParallelThreshold; }

} // namespace

// Each output element is owned by exactly one thread and accumulated in a
// fixed order, so results do not depend on the thread count.

Matrix matmul(const Matrix &a, const Matrix &b) {
  check(a.cols() == b.rows(), "matmul");
  const std::size_t n = a.rows(), m = b.cols(), inner = a.cols();
  Matrix c(n, m);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (go_parallel(n * m * inner))
  for (long i = 0; i < rows; ++i) {
    double *crow = c.data() + i * m;
    const double *arow = a.data() + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = arow[k];
      const double *brow = b.data() + k * m;
      for (std::size_t j = 0; j < m; ++j)
        crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix &a, const Matrix &b) {
  check(a.cols() == b.cols(), "matmul_nt");
  const std::size_t n = a.rows(), m = b.rows(), inner = a.cols();
  Matrix c(n, m);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (go_parallel(n * m * inner))
  for (long i = 0; i < rows; ++i) {
    const double *arow = a.data() + i * inner;
    for (std::size_t j = 0; j < m; ++j) {
      const double *brow = b.data() + j * inner;
      double s = 0.0;
      for (std::size_t k = 0; k < inner; ++k)
        s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix &a, const Matrix &b) {
  check(a.rows() == b.rows(), "matmul_tn");
  const std::size_t n = a.cols(), m = b.cols(), inner = a.rows();
  Matrix c(n, m);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (go_parallel(n * m * inner))
  for (long i = 0; i < rows; ++i) {
    double *crow = c.data() + i * m;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aki = a(k, i);
      const double *brow = b.data() + k * m;
      for (std::size_t j = 0; j < m; ++j)
        crow[j] += aki * brow[j];
    }
  }
  return c;
}

Vector matvec(const Matrix &m, std::span<const double> x) {
  check(m.cols() == x.size(), "matvec");
  Vector y(m.rows());
  const long rows = static_cast<long>(m.rows());
#pragma omp parallel for schedule(static) if (go_parallel(m.size()))
  for (long i = 0; i < rows; ++i)
    y[i] = dot(m.row_span(i), x);
  return y;
}

Vector matvec_t(const Matrix &m, std::span<const double> x) {
  check(m.rows() == x.size(), "matvec_t");
  Vector y(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    axpy(x[i], m.row_span(i), y);
  return y;
}

} // namespace kernels
} // namespace tbvad
