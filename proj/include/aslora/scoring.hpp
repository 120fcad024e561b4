#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "aslora/model.hpp"

namespace aslora::scoring {

/// Fixed per-layer Gaussian projections shared by every client and round.
/// Entries are N(0, 1/dim) so E||g R||^2 = ||g||^2.
struct ProjectionSet {
  std::vector<Matrix> RA;  // d_in x d_in
  std::vector<Matrix> RB;  // d_out x d_out
  std::uint64_t seed = 0;
  bool enabled = true;
};

ProjectionSet make_projection_set(const ModelState& model, std::uint64_t seed, bool enabled = true);

/// (gA R_A, R_B gB). A disabled set leaves the gradients unchanged.
std::pair<Matrix, Matrix> project_gradients(const Matrix& gA, const Matrix& gB, const ProjectionSet& proj, int n);

double score_gradnorm(const Matrix& g_proj);

/// ||g||^2 - (eta/2) <g, H g> with the exact block Hessian.
double score_hvp(const Matrix& g_proj, const LoraLayer& layer, const SyntheticTask& task, int n,
                 std::span<const int> indices, Component component, double eta);

/// Second directional difference of layer_loss along the unit direction v of
/// one factor. The one-sided form (L(W + eps v) - L(W)) / eps^2 is evaluated
/// as written, without a first-order correction.
double fd_curvature(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices,
                    Component component, const Matrix& v, double fd_epsilon, bool one_sided);

double score_fd(const Matrix& g_proj, double curvature, double eta);

enum class EstimatorKind { GradNorm, HVP, FD };

enum class CurvatureSchedule { EveryRound, Periodic, LatePhase };

struct ScoreEstimator {
  EstimatorKind kind = EstimatorKind::GradNorm;
  double fd_epsilon = 1e-3;
  bool fd_one_sided = false;
  /// Step size inside the score; not necessarily the training step size.
  double eta = 0.05;
  CurvatureSchedule schedule = CurvatureSchedule::EveryRound;
  int period = 10;      // Periodic: curvature when t % period == 0
  int late_start = 90;  // LatePhase: curvature when t > late_start
};

/// Whether round t includes the curvature term.
bool curvature_due(const ScoreEstimator& estimator, int t);

struct LayerScores {
  std::vector<double> sA;
  std::vector<double> sB;

  int num_layers() const { return static_cast<int>(sA.size()); }
};

/// Direction used by the FD estimator: g / (||g|| + 1e-12).
Matrix fd_direction(const Matrix& g_proj);

/// Scores both factors of every layer from the supplied gradients (raw or
/// already noised). Curvature terms are evaluated on `indices`.
LayerScores compute_scores(const ModelState& model, const SyntheticTask& task, std::span<const int> indices,
                           std::span<const LayerGrads> grads, const ScoreEstimator& estimator,
                           const ProjectionSet& proj, int t);

}  // namespace aslora::scoring
