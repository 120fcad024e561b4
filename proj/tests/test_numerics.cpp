#include <doctest.h>

#include <cmath>

#include "aslora/numerics.hpp"

using namespace aslora;

TEST_SUITE("numerics") {

TEST_CASE("frobenius norm") {
  CHECK(frobenius_norm(Matrix{{3.0, 4.0}}) == 5.0);
  CHECK(frobenius_norm(Matrix::Zero(3, 7)) == 0.0);
  CHECK(frobenius_norm(Matrix(0, 0)) == 0.0);

  RngStream rng(1);
  const Matrix m = gaussian_matrix(8, 8, 1.0, rng);
  double trace = 0.0;  // trace(M^T M) by explicit loops
  for (int j = 0; j < 8; ++j) {
    for (int i = 0; i < 8; ++i) trace += m(i, j) * m(i, j);
  }
  CHECK(frobenius_norm(m) == doctest::Approx(std::sqrt(trace)).epsilon(1e-14));
}

TEST_CASE("svd") {
  const Svd id = svd(Matrix::Identity(3, 3));
  CHECK(id.S.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(id.S(i) == doctest::Approx(1.0));

  const Svd d = svd(Matrix{{5.0, 0.0}, {0.0, 0.0}});
  CHECK(d.S(0) == doctest::Approx(5.0));
  CHECK(d.S(1) == doctest::Approx(0.0));

  RngStream rng(2);
  const Matrix m = gaussian_matrix(6, 4, 1.0, rng);
  const Svd s = svd(m);
  CHECK(frobenius_norm(s.U * s.S.asDiagonal() * s.V.transpose() - m) < 1e-10);
  CHECK(frobenius_norm(s.U.transpose() * s.U - Matrix::Identity(4, 4)) < 1e-10);
  CHECK(frobenius_norm(s.V.transpose() * s.V - Matrix::Identity(4, 4)) < 1e-10);
  for (int i = 1; i < 4; ++i) CHECK(s.S(i - 1) >= s.S(i));
}

TEST_CASE("svd rejects non-finite input") {
  Matrix m = Matrix::Identity(2, 2);
  m(0, 1) = std::nan("");
  CHECK_THROWS_AS(svd(m), Error);
}

TEST_CASE("pseudoinverse") {
  const Matrix inv = pseudoinverse(Matrix{{2.0, 0.0}, {0.0, 4.0}});
  CHECK(frobenius_norm(inv - Matrix{{0.5, 0.0}, {0.0, 0.25}}) < 1e-15);

  const Matrix col = pseudoinverse(Matrix{{1.0, 0.0, 0.0}});
  CHECK(col.rows() == 3);
  CHECK(col.cols() == 1);
  CHECK(frobenius_norm(col - Matrix{{1.0}, {0.0}, {0.0}}) < 1e-15);

  RngStream rng(3);
  const Matrix M = gaussian_matrix(4, 2, 1.0, rng) * gaussian_matrix(2, 4, 1.0, rng);
  const Matrix P = pseudoinverse(M);
  CHECK(numerical_rank(M) == 2);
  CHECK(frobenius_norm(M * P * M - M) < 1e-8);
  CHECK(frobenius_norm(P * M * P - P) < 1e-8);
  CHECK(frobenius_norm((M * P).transpose() - M * P) < 1e-8);
  CHECK(frobenius_norm((P * M).transpose() - P * M) < 1e-8);
}

TEST_CASE("row projector") {
  RngStream rng(4);
  const Matrix sq = gaussian_matrix(5, 5, 1.0, rng);
  CHECK(frobenius_norm(row_projector(sq) - Matrix::Identity(5, 5)) < 1e-10);

  const Matrix e1 = row_projector(Matrix{{1.0, 0.0, 0.0}});
  Matrix expected = Matrix::Zero(3, 3);
  expected(0, 0) = 1.0;
  CHECK(frobenius_norm(e1 - expected) < 1e-15);

  const Matrix p = row_projector(gaussian_matrix(2, 6, 1.0, rng));
  CHECK(frobenius_norm(p * p - p) < 1e-8);
  CHECK(frobenius_norm(p.transpose() - p) < 1e-8);
  CHECK(p.trace() == doctest::Approx(2.0));
}

TEST_CASE("gaussian matrix") {
  RngStream rng(5);
  CHECK(frobenius_norm(gaussian_matrix(4, 3, 0.0, rng)) == 0.0);

  const Matrix big = gaussian_matrix(1000, 1000, 1.0, rng);
  const double mean = big.mean();
  const double var = (big.array() - mean).square().sum() / static_cast<double>(big.size() - 1);
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);

  RngStream a(77);
  RngStream b(77);
  CHECK(gaussian_matrix(5, 5, 1.0, a) == gaussian_matrix(5, 5, 1.0, b));
}

TEST_CASE("rng streams") {
  RngStream root(9);
  // Derivation does not consume parent state.
  RngStream x1 = root.derive("x");
  RngStream y = root.derive("y");
  RngStream x2 = root.derive("x");
  CHECK(x1.next_u64() == x2.next_u64());
  CHECK(root.derive("x").seed() != y.seed());
  CHECK(root.derive(std::uint64_t{1}).seed() != root.derive(std::uint64_t{2}).seed());

  RngStream u(10);
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }

  // Gamma(k) has mean k.
  for (double shape : {0.3, 1.0, 4.5}) {
    RngStream g(11);
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) sum += g.gamma(shape);
    CHECK(sum / 20000 == doctest::Approx(shape).epsilon(0.05));
  }
}

TEST_CASE("dirichlet") {
  RngStream rng(12);
  const auto one = sample_dirichlet(0.5, 1, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 1.0);

  const auto p = sample_dirichlet(0.5, 6, rng);
  double sum = 0.0;
  for (double v : p) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    for (double v : sample_dirichlet(1e6, 4, rng)) worst = std::max(worst, std::abs(v - 0.25));
  }
  CHECK(worst < 0.01);

  CHECK_THROWS_AS(sample_dirichlet(0.0, 3, rng), ParameterError);
  CHECK_THROWS_AS(sample_dirichlet(1.0, 0, rng), ParameterError);
}

TEST_CASE("finite checks") {
  Matrix m = Matrix::Ones(2, 2);
  CHECK(all_finite(m));
  CHECK_NOTHROW(require_finite(m, "m"));
  m(1, 1) = INFINITY;
  CHECK_FALSE(all_finite(m));
  CHECK_THROWS_AS(require_finite(m, "m"), ParameterError);
}

}
