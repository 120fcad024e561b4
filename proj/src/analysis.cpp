#include "aslora/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace aslora::analysis {

double subspace_misalignment(const Matrix& Bstar, const Matrix& Astar, const Matrix& A, double tol) {
  if (Bstar.cols() != Astar.rows() || Astar.cols() != A.cols()) throw ParameterError("subspace_misalignment: shape mismatch");
  const Matrix target = Bstar * Astar;
  const Matrix p = row_projector(A, tol);
  return frobenius_norm(target - target * p);
}

double layer_reconstruction(const LoraLayer& layer, const SyntheticTask& task, int n) {
  const auto i = static_cast<std::size_t>(n);
  const double s = layer.scale();
  const Matrix diff = s * (task.Bstar[i] * task.Astar[i] - layer.B * layer.A);
  return (diff * task.X[i]).squaredNorm();
}

double reconstruction_risk(const ModelState& model, const SyntheticTask& task) {
  if (model.num_layers() != task.num_layers()) throw ParameterError("reconstruction_risk: layer count mismatch");
  double total = 0.0;
  for (int n = 0; n < model.num_layers(); ++n) total += layer_reconstruction(model.layers[static_cast<std::size_t>(n)], task, n);
  return model.num_layers() > 0 ? total / model.num_layers() : 0.0;
}

FfaFloor ffa_floor_oracle(const SyntheticTask& task, const Matrix& A0, int n) {
  if (n < 0 || n >= task.num_layers()) throw ParameterError("ffa_floor_oracle: layer out of range");
  const auto i = static_cast<std::size_t>(n);
  const Matrix& X = task.X[i];
  const Matrix Z = A0 * X;
  if (numerical_rank(Z) < Z.rows()) {
    throw Error("ffa_floor_oracle: A0 X is row-rank deficient at layer " + std::to_string(n));
  }
  const Matrix target = task.Bstar[i] * task.Astar[i] * X;  // B* A* X, d_out x m
  const Matrix gram = Z * Z.transpose();
  // B_opt = B* A* X Z^T (Z Z^T)^{-1}
  const Matrix b_opt = gram.transpose().ldlt().solve((target * Z.transpose()).transpose()).transpose();
  // P_row(Z) = Z^T (Z Z^T)^{-1} Z in sample space.
  const Matrix p_row = Z.transpose() * gram.ldlt().solve(Z);
  const Matrix residual = task.scale * (target - target * p_row);
  return {b_opt, 0.5 * residual.squaredNorm()};
}

AdaptiveGain adaptive_gain(std::span<const double> sA, std::span<const double> sB) {
  if (sA.size() != sB.size()) throw ParameterError("adaptive_gain: length mismatch");
  AdaptiveGain g;
  for (std::size_t n = 0; n < sA.size(); ++n) {
    const double v = std::max(sA[n], sB[n]) - 0.5 * (sA[n] + sB[n]);
    g.per_layer.push_back(v);
    g.mean += v;
  }
  if (!sA.empty()) g.mean /= static_cast<double>(sA.size());
  return g;
}

double curvature_penalty_ratio(std::span<const CurvatureSample> trace) {
  if (trace.empty()) throw ParameterError("curvature_penalty_ratio: empty trace");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : trace) best = std::min(best, 1.0 - 0.5 * s.eta * s.lambda);
  return best;
}

double rayleigh_quotient(const LoraLayer& layer, const SyntheticTask& task, int n, Component component) {
  const std::vector<int> idx = all_indices(task.num_samples());
  const LayerGrads g = layer_grads(layer, task, n, idx);
  const Matrix& v = component == Component::A ? g.gA : g.gB;
  const double norm2 = v.squaredNorm();
  if (norm2 == 0.0) return 0.0;
  return inner(v, hessian_action(layer, task, n, idx, component, v)) / norm2;
}

namespace {

ModelState shifted(const ModelState& model, const Direction& d, double step) {
  ModelState out = model;
  for (std::size_t n = 0; n < out.layers.size(); ++n) {
    out.layers[n].A += step * d[n].gA;
    out.layers[n].B += step * d[n].gB;
  }
  return out;
}

double direction_norm2(const Direction& d) {
  double s = 0.0;
  for (const auto& g : d) s += g.gA.squaredNorm() + g.gB.squaredNorm();
  return s;
}

double direction_dot(const Direction& a, const Direction& b) {
  double s = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) s += inner(a[n].gA, b[n].gA) + inner(a[n].gB, b[n].gB);
  return s;
}

void scale_direction(Direction& d, double c) {
  for (auto& g : d) {
    g.gA *= c;
    g.gB *= c;
  }
}

}  // namespace

Sharpness perturbation_sharpness(const ModelState& model, const SyntheticTask& task, double rho, bool include_a,
                                 bool include_b) {
  const std::vector<int> idx = all_indices(task.num_samples());
  const double n_layers = static_cast<double>(model.num_layers());
  Direction g;
  for (int n = 0; n < model.num_layers(); ++n) {
    const LoraLayer& layer = model.layers[static_cast<std::size_t>(n)];
    LayerGrads lg = layer_grads(layer, task, n, idx);
    // global_loss averages over layers.
    lg.gA = include_a ? Matrix(lg.gA / n_layers) : Matrix(Matrix::Zero(layer.A.rows(), layer.A.cols()));
    lg.gB = include_b ? Matrix(lg.gB / n_layers) : Matrix(Matrix::Zero(layer.B.rows(), layer.B.cols()));
    g.push_back(std::move(lg));
  }
  const double norm = std::sqrt(direction_norm2(g));
  if (norm == 0.0) return {0.0, true};
  const double base = global_loss(model, task);
  return {global_loss(shifted(model, g, rho / norm), task) - base, false};
}

double parameter_norm(const ModelState& model, bool include_a, bool include_b) {
  double s = 0.0;
  for (const auto& layer : model.layers) {
    if (include_a) s += layer.A.squaredNorm();
    if (include_b) s += layer.B.squaredNorm();
  }
  return std::sqrt(s);
}

namespace {

Direction random_direction(const ModelState& model, RngStream& rng) {
  Direction d;
  for (const auto& layer : model.layers) {
    d.push_back({gaussian_matrix(layer.A.rows(), layer.A.cols(), 1.0, rng),
                 gaussian_matrix(layer.B.rows(), layer.B.cols(), 1.0, rng)});
  }
  return d;
}

}  // namespace

std::pair<Direction, Direction> random_directions(const ModelState& model, RngStream& rng) {
  Direction d1 = random_direction(model, rng);
  Direction d2 = random_direction(model, rng);
  scale_direction(d1, 1.0 / std::sqrt(direction_norm2(d1)));
  // Gram-Schmidt.
  const double proj = direction_dot(d1, d2);
  for (std::size_t n = 0; n < d2.size(); ++n) {
    d2[n].gA -= proj * d1[n].gA;
    d2[n].gB -= proj * d1[n].gB;
  }
  scale_direction(d2, 1.0 / std::sqrt(direction_norm2(d2)));
  return {d1, d2};
}

std::pair<Direction, Direction> principal_b_directions(const ModelState& model, const SyntheticTask& task) {
  // H_B[V] = (s^2/m) V M with M = A X X^T A^T; eigenvectors are e_i u^T with u
  // the top eigenvector of M, so the top eigenvalue has multiplicity d_out.
  int best_layer = -1;
  double best_value = -1.0;
  Vector best_vec;
  for (int n = 0; n < model.num_layers(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    const LoraLayer& layer = model.layers[i];
    const Matrix AX = layer.A * task.X[i];
    const Eigen::MatrixXd M = AX * AX.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
    const Eigen::Index top = M.rows() - 1;
    const double value = layer.scale() * layer.scale() * eig.eigenvalues()(top) / task.num_samples();
    if (value > best_value) {
      best_value = value;
      best_layer = n;
      best_vec = eig.eigenvectors().col(top);
    }
  }
  if (best_layer < 0 || model.layers[static_cast<std::size_t>(best_layer)].B.rows() < 2) {
    throw Error("principal_b_directions: need at least one layer with d_out >= 2");
  }
  auto make = [&](Eigen::Index row) {
    Direction d;
    for (int n = 0; n < model.num_layers(); ++n) {
      const LoraLayer& layer = model.layers[static_cast<std::size_t>(n)];
      LayerGrads g{Matrix::Zero(layer.A.rows(), layer.A.cols()), Matrix::Zero(layer.B.rows(), layer.B.cols())};
      if (n == best_layer) g.gB.row(row) = best_vec.transpose();
      d.push_back(std::move(g));
    }
    return d;
  };
  return {make(0), make(1)};
}

LossSlice loss_slice(const ModelState& model, const SyntheticTask& task, const Direction& d1, const Direction& d2,
                     double half_width, int resolution) {
  if (resolution < 1) throw ParameterError("loss_slice: resolution must be >= 1");
  if (d1.size() != model.layers.size() || d2.size() != model.layers.size()) {
    throw ParameterError("loss_slice: direction layer count mismatch");
  }
  for (std::size_t n = 0; n < model.layers.size(); ++n) {
    const LoraLayer& l = model.layers[n];
    for (const Direction* d : {&d1, &d2}) {
      if ((*d)[n].gA.rows() != l.A.rows() || (*d)[n].gA.cols() != l.A.cols() || (*d)[n].gB.rows() != l.B.rows() ||
          (*d)[n].gB.cols() != l.B.cols()) {
        throw ParameterError("loss_slice: direction shape mismatch at layer " + std::to_string(n));
      }
    }
  }
  LossSlice slice;
  slice.coords.resize(static_cast<std::size_t>(resolution));
  for (int i = 0; i < resolution; ++i) {
    // Symmetric by construction: coords[i] = -coords[resolution - 1 - i].
    slice.coords[static_cast<std::size_t>(i)] =
        resolution == 1 ? 0.0 : half_width * (2.0 * i - (resolution - 1)) / (resolution - 1);
  }
  slice.losses.resize(resolution, resolution);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      ModelState probe = model;
      const double a = slice.coords[static_cast<std::size_t>(i)];
      const double b = slice.coords[static_cast<std::size_t>(j)];
      for (std::size_t n = 0; n < probe.layers.size(); ++n) {
        probe.layers[n].A += a * d1[n].gA + b * d2[n].gA;
        probe.layers[n].B += a * d1[n].gB + b * d2[n].gB;
      }
      slice.losses(i, j) = global_loss(probe, task);
    }
  }
  return slice;
}

void write_slice_csv(std::ostream& out, const LossSlice& slice) {
  out << "a,b,loss\n";
  char line[128];
  for (std::size_t i = 0; i < slice.coords.size(); ++i) {
    for (std::size_t j = 0; j < slice.coords.size(); ++j) {
      std::snprintf(line, sizeof(line), "%.12g,%.12g,%.12g\n", slice.coords[i], slice.coords[j],
                    slice.losses(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out << line;
    }
  }
}

}  // namespace aslora::analysis
