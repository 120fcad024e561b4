#include "aslora/scoring.hpp"

#include <cmath>
#include <string>

namespace aslora::scoring {

ProjectionSet make_projection_set(const ModelState& model, std::uint64_t seed, bool enabled) {
  ProjectionSet proj;
  proj.seed = seed;
  proj.enabled = enabled;
  if (!enabled) return proj;
  RngStream root(seed);
  for (int n = 0; n < model.num_layers(); ++n) {
    const LoraLayer& layer = model.layers[static_cast<std::size_t>(n)];
    RngStream rng = root.derive(static_cast<std::uint64_t>(n));
    const auto d_in = layer.A.cols();
    const auto d_out = layer.B.rows();
    proj.RA.push_back(gaussian_matrix(d_in, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), rng));
    proj.RB.push_back(gaussian_matrix(d_out, d_out, 1.0 / std::sqrt(static_cast<double>(d_out)), rng));
  }
  return proj;
}

std::pair<Matrix, Matrix> project_gradients(const Matrix& gA, const Matrix& gB, const ProjectionSet& proj, int n) {
  if (!proj.enabled) return {gA, gB};
  if (n < 0 || n >= static_cast<int>(proj.RA.size())) throw ParameterError("project_gradients: layer out of range");
  const Matrix& RA = proj.RA[static_cast<std::size_t>(n)];
  const Matrix& RB = proj.RB[static_cast<std::size_t>(n)];
  if (gA.cols() != RA.rows() || RB.cols() != gB.rows()) {
    throw ParameterError("project_gradients: shape mismatch at layer " + std::to_string(n));
  }
  return {gA * RA, RB * gB};
}

double score_gradnorm(const Matrix& g_proj) { return g_proj.squaredNorm(); }

double score_hvp(const Matrix& g_proj, const LoraLayer& layer, const SyntheticTask& task, int n,
                 std::span<const int> indices, Component component, double eta) {
  if (eta < 0.0) throw ParameterError("score_hvp: eta must be >= 0");
  const double gnorm2 = g_proj.squaredNorm();
  if (eta == 0.0) return gnorm2;
  const Matrix h = hessian_action(layer, task, n, indices, component, g_proj);
  return gnorm2 - 0.5 * eta * inner(g_proj, h);
}

double fd_curvature(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices,
                    Component component, const Matrix& v, double fd_epsilon, bool one_sided) {
  if (!(fd_epsilon > 0.0)) throw ParameterError("fd_curvature: epsilon must be > 0");
  LoraLayer probe = layer;
  Matrix& factor = probe.factor(component);
  if (v.rows() != factor.rows() || v.cols() != factor.cols()) {
    throw ParameterError(std::string("fd_curvature: direction shape does not match component ") +
                         component_name(component));
  }
  const Matrix base = factor;
  const double l0 = layer_loss(layer, task, n, indices);
  factor = base + fd_epsilon * v;
  const double lplus = layer_loss(probe, task, n, indices);
  const double eps2 = fd_epsilon * fd_epsilon;
  if (one_sided) return (lplus - l0) / eps2;
  factor = base - fd_epsilon * v;
  const double lminus = layer_loss(probe, task, n, indices);
  return (lplus - 2.0 * l0 + lminus) / eps2;
}

double score_fd(const Matrix& g_proj, double curvature, double eta) {
  const double gnorm2 = g_proj.squaredNorm();
  return gnorm2 - 0.5 * eta * curvature * gnorm2;
}

bool curvature_due(const ScoreEstimator& e, int t) {
  switch (e.schedule) {
    case CurvatureSchedule::EveryRound:
      return true;
    case CurvatureSchedule::Periodic:
      return e.period > 0 && t % e.period == 0;
    case CurvatureSchedule::LatePhase:
      return t > e.late_start;
  }
  return true;
}

Matrix fd_direction(const Matrix& g_proj) { return g_proj / (g_proj.norm() + 1e-12); }

LayerScores compute_scores(const ModelState& model, const SyntheticTask& task, std::span<const int> indices,
                           std::span<const LayerGrads> grads, const ScoreEstimator& estimator,
                           const ProjectionSet& proj, int t) {
  if (static_cast<int>(grads.size()) != model.num_layers()) throw ParameterError("compute_scores: gradient count mismatch");
  LayerScores out;
  const bool curvature = estimator.kind != EstimatorKind::GradNorm && curvature_due(estimator, t);
  for (int n = 0; n < model.num_layers(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    const LoraLayer& layer = model.layers[i];
    auto [gA, gB] = project_gradients(grads[i].gA, grads[i].gB, proj, n);
    double sA = 0.0;
    double sB = 0.0;
    if (!curvature) {
      sA = score_gradnorm(gA);
      sB = score_gradnorm(gB);
    } else if (estimator.kind == EstimatorKind::HVP) {
      sA = score_hvp(gA, layer, task, n, indices, Component::A, estimator.eta);
      sB = score_hvp(gB, layer, task, n, indices, Component::B, estimator.eta);
    } else {
      const double cA =
          fd_curvature(layer, task, n, indices, Component::A, fd_direction(gA), estimator.fd_epsilon, estimator.fd_one_sided);
      const double cB =
          fd_curvature(layer, task, n, indices, Component::B, fd_direction(gB), estimator.fd_epsilon, estimator.fd_one_sided);
      sA = score_fd(gA, cA, estimator.eta);
      sB = score_fd(gB, cB, estimator.eta);
    }
    out.sA.push_back(sA);
    out.sB.push_back(sB);
  }
  return out;
}

}  // namespace aslora::scoring
