#pragma once

#include <optional>
#include <span>
#include <vector>

#include "aslora/numerics.hpp"

namespace aslora::dp {

struct DpConfig {
  double clip_norm = 2.0;
  double noise_multiplier = 1.0;
  double sampling_rate = 0.1;
  double delta = 1e-5;
  bool enabled = false;

  /// Throws ParameterError naming the offending field.
  void validate() const;
};

/// Scales g onto the Frobenius ball of radius C; identity inside the ball.
Matrix clip_gradient(const Matrix& g, double clip_norm);

/// (sum_i clip(g_i, C) + N(0, sigma^2 C^2 I)) / B with B the list length.
Matrix noisy_aggregate(std::span<const Matrix> per_sample, double clip_norm, double noise_multiplier, RngStream& rng);

/// Closed-form bound q^2 C^2 T log(1/delta) / sigma^2. Returns +inf when sigma = 0.
///
/// Sensitivity is taken as C per example; the 1/B normalisation of the noisy
/// mean is not folded in.
double epsilon_bound(double q, double clip_norm, double noise_multiplier, long rounds, double delta);

/// Independent inclusion of each of n indices with probability q.
std::vector<int> poisson_subsample(int n, double q, RngStream& rng);

struct NoiseNorms {
  double sigma = 0.0;
  double full = 0.0;         // ||N_W||
  double b_times_noise = 0.0;  // ||B N_A||
  double noise_times_a = 0.0;  // ||N_B A||
  double cross = 0.0;        // ||N_B N_A||
};

/// Monte-Carlo means of the four noise terms in
/// (B + N_B)(A + N_A) - BA for each sigma.
std::vector<NoiseNorms> noise_decomposition(const Matrix& B, const Matrix& A, std::span<const double> sigmas,
                                            double clip_norm, RngStream& rng, int draws);

class PrivacyLedger {
 public:
  explicit PrivacyLedger(DpConfig config) : config_(config) {}

  void advance() { ++rounds_; }
  long rounds_consumed() const { return rounds_; }
  /// 0 when DP is disabled.
  double epsilon() const;
  const DpConfig& config() const { return config_; }

 private:
  DpConfig config_;
  long rounds_ = 0;
};

enum class SmoothingMethod { None, Gaussian5Tap, Laplacian, Ema };

struct SmoothingConfig {
  SmoothingMethod method = SmoothingMethod::None;
  double laplacian_sigma = 1.0;
  double ema_coef = 0.9;
};

/// Applies the smoothing filter to the flattened (row-major) gradient.
/// For Ema, `state` holds the previous output; it is initialised to g on
/// first use and updated in place.
Matrix smooth_gradient(const Matrix& g, const SmoothingConfig& config, std::optional<Matrix>* state = nullptr);

}  // namespace aslora::dp
