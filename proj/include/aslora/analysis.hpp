#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "aslora/model.hpp"

namespace aslora::analysis {

/// One round of the experiment trace.
struct MetricsRecord {
  int round = 0;
  double loss = 0.0;
  double r_rec = 0.0;
  std::vector<double> delta;
  double agg_error = 0.0;
  double epsilon = 0.0;
  std::string mode_bits;
  std::vector<double> smoothed_a;
  std::vector<double> smoothed_b;
  // Client-averaged scores of this round before smoothing.
  std::vector<double> raw_a;
  std::vector<double> raw_b;
  // Rayleigh quotients <g, H g> / ||g||^2 of the round-start global model.
  std::vector<double> lambda_a;
  std::vector<double> lambda_b;
  double wall_ms = 0.0;
};

/// ||B* A* (I - P_row(A))||_F.
double subspace_misalignment(const Matrix& Bstar, const Matrix& Astar, const Matrix& A, double tol = kDefaultRankTol);

/// (1/N) sum_n ||s B*_n A*_n X_n - s B_n A_n X_n||_F^2, without any 1/m factor.
double reconstruction_risk(const ModelState& model, const SyntheticTask& task);

/// Per-layer term of reconstruction_risk.
double layer_reconstruction(const LoraLayer& layer, const SyntheticTask& task, int n);

struct FfaFloor {
  Matrix B_opt;
  /// 0.5 * ||s B* A* X (I - P_row(A0 X))||_F^2 over the full dataset.
  double floor = 0.0;
};

/// Closed-form minimiser over B of the frozen-A reconstruction error.
/// Throws when A0 X is row-rank deficient.
FfaFloor ffa_floor_oracle(const SyntheticTask& task, const Matrix& A0, int n);

struct AdaptiveGain {
  std::vector<double> per_layer;
  double mean = 0.0;
};

/// max(S_A, S_B) - (S_A + S_B) / 2 per layer.
AdaptiveGain adaptive_gain(std::span<const double> sA, std::span<const double> sB);

struct CurvatureSample {
  double lambda = 0.0;
  double eta = 0.0;
};

/// inf over the trace of 1 - (eta / 2) lambda.
double curvature_penalty_ratio(std::span<const CurvatureSample> trace);

/// <g, H g> / ||g||^2 for one factor on the full dataset; 0 for a zero gradient.
double rayleigh_quotient(const LoraLayer& layer, const SyntheticTask& task, int n, Component component);

struct Sharpness {
  double value = 0.0;
  bool zero_gradient = false;
};

/// L(w + rho g/||g||) - L(w) on the global loss, where g stacks the gradients
/// of the listed components of every layer.
Sharpness perturbation_sharpness(const ModelState& model, const SyntheticTask& task, double rho,
                                 bool include_a = true, bool include_b = true);

/// Euclidean norm of the stacked factors selected by the flags.
double parameter_norm(const ModelState& model, bool include_a = true, bool include_b = true);

/// Per-layer direction with factor-shaped blocks.
using Direction = std::vector<LayerGrads>;

/// Two orthonormal directions spanning the top eigenspace of the B-block
/// Hessian of the layer with the largest B curvature.
std::pair<Direction, Direction> principal_b_directions(const ModelState& model, const SyntheticTask& task);

/// Two random orthonormal directions covering both factors of every layer.
std::pair<Direction, Direction> random_directions(const ModelState& model, RngStream& rng);

struct LossSlice {
  std::vector<double> coords;  // shared axis values for a and b
  Matrix losses;               // losses(i, j) at a = coords[i], b = coords[j]
};

/// Global loss over the grid w + a d1 + b d2, a, b in [-half_width, half_width],
/// `resolution` points per axis (odd values put the current point at the centre).
LossSlice loss_slice(const ModelState& model, const SyntheticTask& task, const Direction& d1, const Direction& d2,
                     double half_width, int resolution);

/// CSV rows "a,b,loss".
void write_slice_csv(std::ostream& out, const LossSlice& slice);

}  // namespace aslora::analysis
