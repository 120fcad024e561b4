#include "aslora/dp.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace aslora::dp {

void DpConfig::validate() const {
  if (!(clip_norm > 0.0)) throw ParameterError("dp.clip_norm must be > 0");
  if (!(noise_multiplier >= 0.0)) throw ParameterError("dp.noise_multiplier must be >= 0");
  if (!(sampling_rate > 0.0 && sampling_rate <= 1.0)) throw ParameterError("dp.sampling_rate must be in (0, 1]");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("dp.delta must be in (0, 1)");
}

Matrix clip_gradient(const Matrix& g, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ParameterError("clip_gradient: C must be > 0");
  const double norm = g.norm();
  if (norm <= clip_norm) return g;
  return g * (clip_norm / norm);
}

Matrix noisy_aggregate(std::span<const Matrix> per_sample, double clip_norm, double noise_multiplier, RngStream& rng) {
  if (per_sample.empty()) throw ParameterError("noisy_aggregate: empty batch");
  Matrix sum = Matrix::Zero(per_sample.front().rows(), per_sample.front().cols());
  for (const Matrix& g : per_sample) sum += clip_gradient(g, clip_norm);
  if (noise_multiplier > 0.0) sum += gaussian_matrix(sum.rows(), sum.cols(), noise_multiplier * clip_norm, rng);
  return sum / static_cast<double>(per_sample.size());
}

double epsilon_bound(double q, double clip_norm, double noise_multiplier, long rounds, double delta) {
  if (!(q > 0.0 && q <= 1.0)) throw ParameterError("epsilon_bound: q must be in (0, 1]");
  if (!(clip_norm > 0.0)) throw ParameterError("epsilon_bound: C must be > 0");
  if (!(noise_multiplier >= 0.0)) throw ParameterError("epsilon_bound: sigma must be >= 0");
  if (rounds < 0) throw ParameterError("epsilon_bound: rounds must be >= 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("epsilon_bound: delta must be in (0, 1)");
  if (rounds == 0) return 0.0;
  if (noise_multiplier == 0.0) return std::numeric_limits<double>::infinity();
  return q * q * clip_norm * clip_norm * static_cast<double>(rounds) * std::log(1.0 / delta) /
         (noise_multiplier * noise_multiplier);
}

std::vector<int> poisson_subsample(int n, double q, RngStream& rng) {
  if (!(q > 0.0 && q <= 1.0)) throw ParameterError("poisson_subsample: q must be in (0, 1]");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(std::ceil(q * n)));
  for (int i = 0; i < n; ++i) {
    if (q >= 1.0 || rng.bernoulli(q)) out.push_back(i);
  }
  return out;
}

std::vector<NoiseNorms> noise_decomposition(const Matrix& B, const Matrix& A, std::span<const double> sigmas,
                                            double clip_norm, RngStream& rng, int draws) {
  if (draws < 1) throw ParameterError("noise_decomposition: draws must be >= 1");
  std::vector<NoiseNorms> out;
  for (double sigma : sigmas) {
    NoiseNorms acc;
    acc.sigma = sigma;
    const double sd = sigma * clip_norm;
    for (int d = 0; d < draws; ++d) {
      const Matrix nA = gaussian_matrix(A.rows(), A.cols(), sd, rng);
      const Matrix nB = gaussian_matrix(B.rows(), B.cols(), sd, rng);
      const Matrix nW = gaussian_matrix(B.rows(), A.cols(), sd, rng);
      acc.full += nW.norm();
      acc.b_times_noise += (B * nA).norm();
      acc.noise_times_a += (nB * A).norm();
      acc.cross += (nB * nA).norm();
    }
    acc.full /= draws;
    acc.b_times_noise /= draws;
    acc.noise_times_a /= draws;
    acc.cross /= draws;
    out.push_back(acc);
  }
  return out;
}

double PrivacyLedger::epsilon() const {
  if (!config_.enabled) return 0.0;
  return epsilon_bound(config_.sampling_rate, config_.clip_norm, config_.noise_multiplier, rounds_, config_.delta);
}

namespace {

Matrix gaussian5(const Matrix& g) {
  static constexpr double kKernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  const Eigen::Index n = g.size();
  Matrix out(g.rows(), g.cols());
  const double* in = g.data();
  // Reflect padding without repeating the edge sample: x[-1] = x[1].
  auto at = [&](Eigen::Index i) {
    if (n == 1) return in[0];
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * (n - 1) - i;
    }
    return in[i];
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = 0.0;
    for (int k = -2; k <= 2; ++k) v += kKernel[k + 2] * at(i + k);
    out.data()[i] = v;
  }
  return out;
}

// Solves (I + sigma L) x = g, L the path-graph Laplacian, with the Thomas algorithm.
Matrix laplacian(const Matrix& g, double sigma) {
  const Eigen::Index n = g.size();
  Matrix out(g.rows(), g.cols());
  if (n == 1) {
    out.data()[0] = g.data()[0];
    return out;
  }
  std::vector<double> diag(static_cast<std::size_t>(n));
  std::vector<double> upper(static_cast<std::size_t>(n));
  std::vector<double> rhs(g.data(), g.data() + n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double degree = (i == 0 || i == n - 1) ? 1.0 : 2.0;
    diag[static_cast<std::size_t>(i)] = 1.0 + sigma * degree;
  }
  const double off = -sigma;
  // Forward sweep.
  upper[0] = off / diag[0];
  rhs[0] /= diag[0];
  for (std::size_t i = 1; i < static_cast<std::size_t>(n); ++i) {
    const double denom = diag[i] - off * upper[i - 1];
    upper[i] = off / denom;
    rhs[i] = (rhs[i] - off * rhs[i - 1]) / denom;
  }
  // Back substitution.
  out.data()[n - 1] = rhs[static_cast<std::size_t>(n - 1)];
  for (Eigen::Index i = n - 2; i >= 0; --i) {
    out.data()[i] = rhs[static_cast<std::size_t>(i)] - upper[static_cast<std::size_t>(i)] * out.data()[i + 1];
  }
  return out;
}

}  // namespace

Matrix smooth_gradient(const Matrix& g, const SmoothingConfig& config, std::optional<Matrix>* state) {
  switch (config.method) {
    case SmoothingMethod::None:
      return g;
    case SmoothingMethod::Gaussian5Tap:
      return g.size() == 0 ? g : gaussian5(g);
    case SmoothingMethod::Laplacian:
      if (!(config.laplacian_sigma > 0.0)) throw ParameterError("laplacian smoothing sigma must be > 0");
      return g.size() == 0 ? g : laplacian(g, config.laplacian_sigma);
    case SmoothingMethod::Ema: {
      if (!(config.ema_coef > 0.0 && config.ema_coef < 1.0)) throw ParameterError("ema coefficient must be in (0, 1)");
      if (state == nullptr) throw ParameterError("ema smoothing requires a state slot");
      if (!state->has_value()) {
        *state = g;
        return g;
      }
      Matrix out = config.ema_coef * state->value() + (1.0 - config.ema_coef) * g;
      *state = out;
      return out;
    }
  }
  return g;
}

}  // namespace aslora::dp
