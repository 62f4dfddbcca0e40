#include <doctest.h>

#include "support/gradcheck.hpp"
#include "tbvad/error.hpp"
#include "tbvad/kernels.hpp"

using namespace tbvad;
using testing::random_matrix;

namespace {

void check_close(const Matrix &a, const Matrix &b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a.flat()[i] == doctest::Approx(b.flat()[i]).epsilon(1e-12));
}

void check_close(const Vector &a, const Vector &b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

} // namespace

TEST_CASE("reference kernels by hand") {
  const Matrix a{{1, 2}, {3, 4}}, b{{5, 6}, {7, 8}};
  CHECK(reference::matmul(a, b) == Matrix{{19, 22}, {43, 50}});
  CHECK(reference::matmul_nt(a, b) == Matrix{{17, 23}, {39, 53}});
  CHECK(reference::matmul_tn(a, b) == Matrix{{26, 30}, {38, 44}});
  CHECK(reference::matvec(a, Vector{1, 1}) == Vector{3, 7});
  CHECK(reference::matvec_t(a, Vector{1, 1}) == Vector{4, 6});
}

TEST_CASE("parallel kernels match the reference") {
  Rng rng(1);
  // sizes straddle the threading threshold
  for (std::size_t n : {1u, 3u, 17u, 64u, 130u}) {
    const Matrix a = random_matrix(n, n + 2, rng), b = random_matrix(n + 2, n + 1, rng);
    const Matrix c = random_matrix(n + 1, n + 2, rng), e = random_matrix(n, n + 1, rng);
    check_close(kernels::matmul(a, b), reference::matmul(a, b));
    check_close(kernels::matmul_nt(a, c), reference::matmul_nt(a, c));
    check_close(kernels::matmul_tn(a, e), reference::matmul_tn(a, e));
    Vector x(n + 2), y(n);
    for (double &v : x)
      v = rng.uniform(-1, 1);
    for (double &v : y)
      v = rng.uniform(-1, 1);
    check_close(kernels::matvec(a, x), reference::matvec(a, x));
    check_close(kernels::matvec_t(a, y), reference::matvec_t(a, y));
  }
}

TEST_CASE("kernels are deterministic") {
  Rng rng(2);
  const Matrix a = random_matrix(200, 150, rng), b = random_matrix(150, 120, rng);
  CHECK(kernels::matmul(a, b) == kernels::matmul(a, b));
}

TEST_CASE("shape mismatches throw") {
  const Matrix a(2, 3), b(2, 3);
  CHECK_THROWS_AS(kernels::matmul(a, b), ValidationError);
  CHECK_THROWS_AS(reference::matmul(a, b), ValidationError);
  CHECK_THROWS_AS(kernels::matmul_nt(a, Matrix(2, 2)), ValidationError);
  CHECK_THROWS_AS(kernels::matmul_tn(a, Matrix(3, 3)), ValidationError);
  CHECK_THROWS_AS(kernels::matvec(a, Vector(2)), ValidationError);
  CHECK_THROWS_AS(kernels::matvec_t(a, Vector(3)), ValidationError);
}

TEST_CASE("empty operands") {
  CHECK(kernels::matmul(Matrix(0, 3), Matrix(3, 2)) == Matrix(0, 2));
  CHECK(kernels::matmul(Matrix(2, 0), Matrix(0, 2)) == Matrix(2, 2));
}
