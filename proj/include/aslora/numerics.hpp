#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace aslora {

/// Dense real matrix, row-major storage.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Base error for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an argument violates a documented precondition.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Deterministic random stream.
///
/// The generator is SplitMix64, whose output depends only on the seed and the
/// number of draws, so identical seeds reproduce identical values on every
/// platform. Child streams are derived by hashing (seed, label) and never
/// consume state from the parent, which makes sibling streams independent of
/// the order in which they are created.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }

  RngStream derive(std::string_view label) const;
  RngStream derive(std::uint64_t label) const;

  std::uint64_t next_u64();
  /// Uniform in the open interval (0, 1).
  double uniform();
  double normal();
  double gamma(double shape);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct Svd {
  Matrix U;  // rows x k
  Vector S;  // k, descending, non-negative
  Matrix V;  // cols x k
};

double frobenius_norm(const Matrix& m);

/// Thin SVD with m = U diag(S) V^T.
Svd svd(const Matrix& m);

/// Default rank cutoff used when tol < 0: 1e-10 relative to the largest
/// singular value.
inline constexpr double kDefaultRankTol = 1e-10;

/// Moore-Penrose pseudoinverse. Singular values at or below tol * S_max are
/// treated as zero.
Matrix pseudoinverse(const Matrix& m, double tol = kDefaultRankTol);

/// Orthogonal projector A^+ A onto the row space of a (cols x cols).
Matrix row_projector(const Matrix& a, double tol = kDefaultRankTol);

/// Numerical rank with the same relative cutoff as pseudoinverse.
int numerical_rank(const Matrix& m, double tol = kDefaultRankTol);

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, RngStream& rng);

std::vector<double> sample_dirichlet(double alpha, int k, RngStream& rng);

/// Frobenius inner product.
inline double inner(const Matrix& a, const Matrix& b) { return (a.array() * b.array()).sum(); }

bool all_finite(const Matrix& m);

/// Throws ParameterError if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);

}  // namespace aslora
