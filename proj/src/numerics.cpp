#include "aslora/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace aslora {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b * 0xD6E8FEB86659FD93ULL);
  splitmix64(s);
  return splitmix64(s);
}

// FNV-1a, platform independent unlike std::hash.
std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

RngStream RngStream::derive(std::string_view label) const { return RngStream(mix(seed_, fnv1a(label))); }

RngStream RngStream::derive(std::uint64_t label) const {
  return RngStream(mix(seed_ ^ 0x5851F42D4C957F2DULL, label));
}

std::uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::uniform() {
  // 53 random mantissa bits, shifted by half an ulp to exclude 0 and 1.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller.
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw ParameterError("gamma shape must be > 0");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  // Marsaglia-Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double frobenius_norm(const Matrix& m) { return m.norm(); }

Svd svd(const Matrix& m) {
  if (m.size() == 0) return {Matrix(m.rows(), 0), Vector(0), Matrix(m.cols(), 0)};
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(Eigen::MatrixXd(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success) {
    throw Error("svd: Jacobi sweeps failed to converge for " + std::to_string(m.rows()) + "x" +
                std::to_string(m.cols()) + " input (info=" + std::to_string(static_cast<int>(solver.info())) +
                ")");
  }
  return {solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

int numerical_rank(const Matrix& m, double tol) {
  if (m.size() == 0) return 0;
  const Svd d = svd(m);
  const double cutoff = tol * d.S(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < d.S.size(); ++i) {
    if (d.S(i) > cutoff) ++rank;
  }
  return rank;
}

Matrix pseudoinverse(const Matrix& m, double tol) {
  if (tol < 0.0) throw ParameterError("pseudoinverse: tol must be >= 0");
  Matrix out = Matrix::Zero(m.cols(), m.rows());
  if (m.size() == 0) return out;
  const Svd d = svd(m);
  const double cutoff = tol * d.S(0);
  for (Eigen::Index i = 0; i < d.S.size(); ++i) {
    if (d.S(i) > cutoff && d.S(i) > 0.0) {
      out.noalias() += (d.V.col(i) / d.S(i)) * d.U.col(i).transpose();
    }
  }
  return out;
}

Matrix row_projector(const Matrix& a, double tol) {
  Matrix p = Matrix::Zero(a.cols(), a.cols());
  if (a.size() == 0) return p;
  const Svd d = svd(a);
  const double cutoff = tol * d.S(0);
  // A^+ A = sum over retained singular triplets of v_i v_i^T; this form is
  // symmetric and idempotent to rounding.
  for (Eigen::Index i = 0; i < d.S.size(); ++i) {
    if (d.S(i) > cutoff && d.S(i) > 0.0) p.noalias() += d.V.col(i) * d.V.col(i).transpose();
  }
  return p;
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, RngStream& rng) {
  if (stddev < 0.0) throw ParameterError("gaussian_matrix: stddev must be >= 0");
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = stddev * rng.normal();
  return out;
}

std::vector<double> sample_dirichlet(double alpha, int k, RngStream& rng) {
  if (!(alpha > 0.0)) throw ParameterError("sample_dirichlet: alpha must be > 0");
  if (k < 1) throw ParameterError("sample_dirichlet: k must be >= 1");
  if (k == 1) return {1.0};
  std::vector<double> p(static_cast<std::size_t>(k));
  double total = 0.0;
  for (auto& v : p) {
    v = rng.gamma(alpha);
    total += v;
  }
  if (!(total > 0.0)) {
    // Every draw underflowed (tiny alpha); put all mass on one uniformly chosen coordinate.
    std::fill(p.begin(), p.end(), 0.0);
    p[static_cast<std::size_t>(rng.next_u64() % static_cast<std::uint64_t>(k))] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) throw ParameterError(std::string(what) + ": non-finite entry");
}

}  // namespace aslora
