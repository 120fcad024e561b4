#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "aslora/dp.hpp"

using namespace aslora;
using namespace aslora::dp;

TEST_SUITE("dp") {

TEST_CASE("clip gradient") {
  const Matrix half = Matrix::Constant(2, 2, 0.5);  // norm 1 = C/2
  CHECK(clip_gradient(half, 2.0) == half);

  Matrix ten = Matrix::Zero(2, 2);
  ten(0, 0) = 6.0;
  ten(1, 1) = 8.0;
  const Matrix clipped = clip_gradient(ten, 2.0);
  CHECK(frobenius_norm(clipped - ten / 5.0) < 1e-15);
  CHECK(frobenius_norm(clipped) == doctest::Approx(2.0).epsilon(1e-15));

  CHECK(frobenius_norm(clip_gradient(Matrix::Zero(3, 3), 2.0)) == 0.0);
  CHECK_THROWS_AS(clip_gradient(half, 0.0), ParameterError);
}

TEST_CASE("noisy aggregate") {
  RngStream rng(1);
  std::vector<Matrix> small{Matrix::Constant(2, 3, 0.1), Matrix::Constant(2, 3, 0.3)};
  CHECK(frobenius_norm(noisy_aggregate(small, 2.0, 0.0, rng) - Matrix::Constant(2, 3, 0.2)) < 1e-15);

  // One zero sample, sigma = 1, C = 2: entries are N(0, 4).
  const std::vector<Matrix> zero{Matrix::Zero(1, 1)};
  double sum_sq = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = noisy_aggregate(zero, 2.0, 1.0, rng)(0, 0);
    sum_sq += v * v;
  }
  CHECK(sum_sq / 10000 == doctest::Approx(4.0).epsilon(0.05));

  RngStream a(5);
  RngStream b(5);
  CHECK(noisy_aggregate(small, 2.0, 1.0, a) == noisy_aggregate(small, 2.0, 1.0, b));

  const std::vector<Matrix> none;
  CHECK_THROWS_AS(noisy_aggregate(none, 2.0, 1.0, rng), ParameterError);
}

TEST_CASE("epsilon bound") {
  CHECK(epsilon_bound(0.1, 2.0, 2.0, 0, 1e-5) == 0.0);
  // 0.01 * 4 * 100 * ln(1e5) / 4
  CHECK(epsilon_bound(0.1, 2.0, 2.0, 100, 1e-5) == doctest::Approx(11.512925464970229).epsilon(1e-12));
  const double e1 = epsilon_bound(0.3, 1.5, 1.2, 40, 1e-6);
  CHECK(epsilon_bound(0.3, 1.5, 2.4, 40, 1e-6) == doctest::Approx(e1 / 4).epsilon(1e-12));
  CHECK(std::isinf(epsilon_bound(0.3, 1.5, 0.0, 40, 1e-6)));
  CHECK_THROWS_AS(epsilon_bound(0.0, 1.0, 1.0, 1, 1e-5), ParameterError);
  CHECK_THROWS_AS(epsilon_bound(0.1, 1.0, 1.0, 1, 1.0), ParameterError);
  CHECK_THROWS_AS(epsilon_bound(0.1, 1.0, 1.0, -1, 1e-5), ParameterError);
}

TEST_CASE("privacy ledger") {
  DpConfig c;
  c.sampling_rate = 0.1;
  c.clip_norm = 2;
  c.noise_multiplier = 2;
  PrivacyLedger off(c);
  off.advance();
  CHECK(off.epsilon() == 0.0);
  c.enabled = true;
  PrivacyLedger on(c);
  for (int t = 0; t < 100; ++t) on.advance();
  CHECK(on.rounds_consumed() == 100);
  CHECK(on.epsilon() == doctest::Approx(11.512925464970229));
}

TEST_CASE("dp config validation") {
  DpConfig c;
  CHECK_NOTHROW(c.validate());
  c.sampling_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = DpConfig{};
  c.delta = 1.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = DpConfig{};
  c.noise_multiplier = -1.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("poisson subsample") {
  RngStream rng(2);
  const auto all = poisson_subsample(50, 1.0, rng);
  REQUIRE(all.size() == 50);
  for (int i = 0; i < 50; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);

  double total = 0.0;
  for (int d = 0; d < 100; ++d) total += static_cast<double>(poisson_subsample(10000, 0.5, rng).size());
  CHECK(std::abs(total / 100 - 5000.0) <= 100.0);

  // Empty draws happen at small q * n.
  int empty = 0;
  for (int d = 0; d < 200; ++d) empty += poisson_subsample(5, 0.05, rng).empty();
  CHECK(empty > 0);
}

TEST_CASE("noise decomposition") {
  RngStream rng(3);
  const Matrix B = gaussian_matrix(8, 2, 1.0, rng);
  const Matrix A = gaussian_matrix(2, 8, 1.0, rng);
  const std::vector<double> zero{0.0};
  const auto z = noise_decomposition(B, A, zero, 2.0, rng, 10);
  CHECK(z[0].full == 0.0);
  CHECK(z[0].b_times_noise == 0.0);
  CHECK(z[0].noise_times_a == 0.0);
  CHECK(z[0].cross == 0.0);

  // Per-entry noise std is sigma * C, so E||N_W||^2 = (sigma C)^2 d_out d_in.
  const std::vector<double> one{1.0};
  const auto n = noise_decomposition(B, A, one, 2.0, rng, 400);
  CHECK(n[0].full == doctest::Approx(2.0 * 8.0).epsilon(0.05));
}

TEST_CASE("smoothing filters") {
  const Matrix flat = Matrix::Constant(3, 7, 1.5);
  SmoothingConfig g5{SmoothingMethod::Gaussian5Tap};
  SmoothingConfig lap{SmoothingMethod::Laplacian, 1.0};
  CHECK(frobenius_norm(smooth_gradient(flat, g5) - flat) < 1e-14);
  CHECK(frobenius_norm(smooth_gradient(flat, lap) - flat) < 1e-13);

  RngStream rng(4);
  const Matrix g = gaussian_matrix(4, 9, 1.0, rng);
  SmoothingConfig tiny{SmoothingMethod::Laplacian, 1e-12};
  CHECK(frobenius_norm(smooth_gradient(g, tiny) - g) < 1e-8);
  CHECK(smooth_gradient(g, SmoothingConfig{}) == g);

  // Dense solve of (I + sigma L) x = g as the oracle for the tridiagonal sweep.
  const Eigen::Index n = g.size();
  Matrix sys = Matrix::Identity(n, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    sys(i, i) += 1.0;
    sys(i + 1, i + 1) += 1.0;
    sys(i, i + 1) -= 1.0;
    sys(i + 1, i) -= 1.0;
  }
  const Vector flat_g = Eigen::Map<const Vector>(g.data(), n);
  const Vector x = sys.partialPivLu().solve(flat_g);
  const Matrix got = smooth_gradient(g, lap);
  CHECK((Eigen::Map<const Vector>(got.data(), n) - x).norm() < 1e-12);

  // Alternating +-1 is the top Laplacian mode (eigenvalue ~4) away from the ends.
  Matrix alt(1, 101);
  for (int i = 0; i < 101; ++i) alt(0, i) = i % 2 ? -1.0 : 1.0;
  const Matrix damped = smooth_gradient(alt, lap);
  CHECK(std::abs(damped(0, 50)) == doctest::Approx(1.0 / (1.0 + 4.0)).epsilon(0.1));
}

TEST_CASE("ema smoothing") {
  SmoothingConfig ema{SmoothingMethod::Ema, 1.0, 0.8};
  std::optional<Matrix> state;
  const Matrix a = Matrix::Constant(2, 2, 10.0);
  CHECK(smooth_gradient(a, ema, &state) == a);
  const Matrix b = Matrix::Zero(2, 2);
  CHECK(frobenius_norm(smooth_gradient(b, ema, &state) - Matrix::Constant(2, 2, 8.0)) < 1e-14);
  CHECK_THROWS_AS(smooth_gradient(a, ema, nullptr), ParameterError);
}

}
