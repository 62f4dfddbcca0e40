// SPDX-License-Identifier: Apache-2.0
#include "tbvad/error.hpp"
#include "tbvad/kernels.hpp"

namespace tbvad::reference {

Matrix matmul(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.rows())
    throw ValidationError("dimension mismatch in matmul");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_nt(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.cols())
    throw ValidationError("dimension mismatch in matmul_nt");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_tn(const Matrix &a, const Matrix &b) {
  if (a.rows() != b.rows())
    throw ValidationError("dimension mismatch in matmul_tn");
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k)
        s += a(k, i) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Vector matvec(const Matrix &m, std::span<const double> x) {
  if (m.cols() != x.size())
    throw ValidationError("dimension mismatch in matvec");
  Vector y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      y[i] += m(i, j) * x[j];
  return y;
}

Vector matvec_t(const Matrix &m, std::span<const double> x) {
  if (m.rows() != x.size())
    throw ValidationError("dimension mismatch in matvec_t");
  Vector y(m.cols(), 0.0);
  for (std::size_t j = 0; j < m.cols(); ++j)
    for (std::size_t i = 0; i < m.rows(); ++i)
      y[j] += m(i, j) * x[i];
  return y;
}

} // namespace tbvad::reference
