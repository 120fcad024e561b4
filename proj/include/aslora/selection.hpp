#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aslora/numerics.hpp"
#include "aslora/scoring.hpp"

namespace aslora::selection {

/// Per-layer mode bits: 0 trains A, 1 trains B. `both` marks the two-sided
/// FedLoRA sentinel in which every bit is ignored.
struct ModeVector {
  std::vector<std::uint8_t> bits;
  bool both = false;

  static ModeVector uniform(int n, std::uint8_t bit) { return {std::vector<std::uint8_t>(static_cast<std::size_t>(n), bit), false}; }
  static ModeVector both_active(int n) { return {std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0), true}; }

  int size() const { return static_cast<int>(bits.size()); }
  bool trains_a(int n) const { return both || bits[static_cast<std::size_t>(n)] == 0; }
  bool trains_b(int n) const { return both || bits[static_cast<std::size_t>(n)] == 1; }
  /// "0101..." or "****" for the sentinel.
  std::string to_string() const;

  bool operator==(const ModeVector&) const = default;
};

enum class Granularity { PerLayerShared, Global, PerClient };
enum class AggregationRule { UniformAvg, WeightedAvg, MajorityVote };
enum class Policy { SoftmaxSample, Argmax };

struct SelectionConfig {
  double ema_coef = 0.8;
  double T0 = 2.0;
  double T_min = 0.2;
  double gamma = 0.95;
  int warmup_rounds = 10;
  Granularity granularity = Granularity::PerLayerShared;
  AggregationRule rule = AggregationRule::UniformAvg;
  Policy policy = Policy::SoftmaxSample;

  void validate() const;
};

struct SelectionState {
  SelectionConfig config;
  std::vector<double> smoothed_a;
  std::vector<double> smoothed_b;
  bool initialized = false;

  explicit SelectionState(SelectionConfig cfg = {}, int num_layers = 0)
      : config(cfg),
        smoothed_a(static_cast<std::size_t>(num_layers), 0.0),
        smoothed_b(static_cast<std::size_t>(num_layers), 0.0) {}

  int num_layers() const { return static_cast<int>(smoothed_a.size()); }

  /// Folds one round of aggregated scores into the EMA; the first call copies them.
  void update(const scoring::LayerScores& scores);
};

double ema_update(double prev, double next, double ema_coef);

double temperature(int t, double T0, double T_min, double gamma, int warmup_rounds);

/// Softmax probability of training A, evaluated with max subtraction.
double select_probability(double score_a, double score_b, double T);

ModeVector select_modes(const SelectionState& state, int t, RngStream& rng);

/// Combines per-client scores. Weighted averaging uses `weights` (shard sizes);
/// majority voting returns per-layer vote counts.
scoring::LayerScores aggregate_client_scores(std::span<const scoring::LayerScores> per_client,
                                             std::span<const double> weights, AggregationRule rule);

}  // namespace aslora::selection
