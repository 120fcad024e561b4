#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "aslora/numerics.hpp"

namespace aslora {

enum class Component { A, B };

inline const char* component_name(Component c) { return c == Component::A ? "A" : "B"; }

/// Frozen base weight plus low-rank factors. The applied update is
/// scale() * B * A with scale() = alpha_scale / rank.
struct LoraLayer {
  Matrix W0;  // d_out x d_in
  Matrix A;   // r x d_in
  Matrix B;   // d_out x r
  int rank = 0;
  double alpha_scale = 0.0;

  double scale() const { return alpha_scale / static_cast<double>(rank); }
  const Matrix& factor(Component c) const { return c == Component::A ? A : B; }
  Matrix& factor(Component c) { return c == Component::A ? A : B; }
};

/// Per-layer regression data with a planted optimal pair. Sample j of the
/// dataset is column j of every X[n] / Y[n].
struct SyntheticTask {
  std::vector<Matrix> X;      // d_in x m
  std::vector<Matrix> Y;      // d_out x m
  std::vector<Matrix> Bstar;  // d_out x r
  std::vector<Matrix> Astar;  // r x d_in
  double scale = 1.0;

  int num_layers() const { return static_cast<int>(X.size()); }
  int num_samples() const { return X.empty() ? 0 : static_cast<int>(X.front().cols()); }
};

struct Trainable {
  bool a = true;
  bool b = true;
};

struct ModelState {
  std::vector<LoraLayer> layers;
  /// Which factors may change this round; set by the federation loop.
  std::vector<Trainable> trainable;

  int num_layers() const { return static_cast<int>(layers.size()); }
};

Matrix effective_weight(const LoraLayer& layer);

std::vector<int> all_indices(int m);

double layer_loss(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices);
Matrix grad_A(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices);
Matrix grad_B(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices);

struct LayerGrads {
  Matrix gA;
  Matrix gB;
};

/// Both gradients from one residual evaluation.
LayerGrads layer_grads(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices);

/// Gradients of the un-normalised per-sample loss 0.5 * ||W x_i - y_i||^2.
/// Their mean over a batch equals layer_grads on that batch.
std::vector<LayerGrads> per_sample_grads(const LoraLayer& layer, const SyntheticTask& task, int n,
                                         std::span<const int> indices);

/// Exact blockwise Hessian of layer_loss with respect to one factor, applied to V.
Matrix hessian_action(const LoraLayer& layer, const SyntheticTask& task, int n, std::span<const int> indices,
                      Component component, const Matrix& V);

/// Mean of layer_loss over all layers on the full dataset.
double global_loss(const ModelState& model, const SyntheticTask& task);

struct TaskOptions {
  int num_layers = 4;
  int d_in = 32;
  int d_out = 32;
  int rank = 8;
  double alpha_scale = 8.0;
  int num_samples = 384;
  /// Misalignment targets, one per layer or a single broadcast value.
  std::vector<double> delta0_targets{0.5};
  /// When true delta0_targets are fractions of ||B* A*||_F instead of absolute values.
  bool delta0_relative = true;
  double label_noise = 0.0;
  /// Rescale inputs so that X X^T = m I.
  bool whiten_inputs = false;
};

struct GeneratedTask {
  ModelState model;
  SyntheticTask task;
};

/// Plants (B*, A*) and builds A0 whose row space sits at a controlled
/// principal angle to row(A*), so the initial misalignment hits the target.
/// B0 = 0.
GeneratedTask make_synthetic_task(const TaskOptions& options, RngStream& rng);

/// Text dump: header line "aslora-task v1", then one block per matrix
/// ("matrix <name> <rows> <cols>" followed by row-major values).
void write_task(std::ostream& out, const ModelState& model, const SyntheticTask& task);
GeneratedTask read_task(std::istream& in);

}  // namespace aslora
