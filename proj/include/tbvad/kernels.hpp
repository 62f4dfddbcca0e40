// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tbvad/tensor.hpp"

// Dense kernels used by the encoder, the reasoning branch and training.
// `tbvad::kernels` holds the OpenMP versions; `tbvad::reference` holds the
// straight serial loops they are tested and benchmarked against.

namespace tbvad {

namespace kernels {

/// C = A * B
Matrix matmul(const Matrix &a, const Matrix &b);
/// C = A * B^T
Matrix matmul_nt(const Matrix &a, const Matrix &b);
/// C = A^T * B
Matrix matmul_tn(const Matrix &a, const Matrix &b);
/// y = M * x  (M is rows x cols, x has cols entries)
Vector matvec(const Matrix &m, std::span<const double> x);
/// y = M^T * x
Vector matvec_t(const Matrix &m, std::span<const double> x);

/// Below this many multiply-adds the kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

} // namespace kernels

namespace reference {

Matrix matmul(const Matrix &a, const Matrix &b);
Matrix matmul_nt(const Matrix &a, const Matrix &b);
Matrix matmul_tn(const Matrix &a, const Matrix &b);
Vector matvec(const Matrix &m, std::span<const double> x);
Vector matvec_t(const Matrix &m, std::span<const double> x);

} // namespace reference

} // namespace tbvad
