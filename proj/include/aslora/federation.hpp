#pragma once

#include <optional>
#include <span>
#include <vector>

#include "aslora/analysis.hpp"
#include "aslora/config.hpp"
#include "aslora/dp.hpp"
#include "aslora/model.hpp"
#include "aslora/scoring.hpp"
#include "aslora/selection.hpp"

namespace aslora::federation {

using selection::ModeVector;

/// Assigns every sample to a client drawn from p ~ Dirichlet(alpha 1_K).
/// Re-draws when a shard comes out empty.
std::vector<std::vector<int>> partition_dirichlet(int n_samples, int K, double alpha, RngStream& rng,
                                                  int max_retries = 100);

/// Server-side decision for round t. `selection_state` and `rng` are only
/// consulted by AS_LoRA and UniformRandom.
ModeVector derive_mode(const StrategyConfig& strategy, int t, int num_layers,
                       const selection::SelectionState* selection_state, RngStream& rng);

struct ClientState {
  int id = 0;
  std::vector<int> shard;
  ModelState local;
  RngStream rng;
};

struct LocalTrainOptions {
  int tau = 10;
  double eta = 0.05;
  dp::DpConfig dp;
  scoring::ScoreEstimator estimator;
  bool scores_from_noised = true;
  int round = 1;
};

struct LocalResult {
  ModelState model;
  scoring::LayerScores scores;
  int skipped_steps = 0;
};

/// Runs tau DP-SGD (or plain GD) steps on the client's shard, touching only
/// the factors enabled by `mode`, and scores both factors of every layer on
/// the final step.
LocalResult local_train(const ClientState& client, const SyntheticTask& task, const ModeVector& mode,
                        const LocalTrainOptions& options, const scoring::ProjectionSet& proj);

/// ||(1/K) sum_k B_k A_k - mean(B) mean(A)||_F.
double aggregation_error(std::span<const Matrix> Bs, std::span<const Matrix> As);

/// Uniform client mean of each factor that some client trained at a layer;
/// untouched factors carry over from `previous` bit for bit.
ModelState aggregate_components(const ModelState& previous, std::span<const ModelState> clients,
                                std::span<const ModeVector> client_modes);

struct ServerState {
  ModelState global;
  selection::SelectionState selection;
  std::vector<selection::SelectionState> client_selection;  // per-client granularity only
  dp::PrivacyLedger ledger;
  scoring::ProjectionSet projection;
  StrategyConfig strategy;
  int round = 0;
  std::vector<std::optional<Matrix>> smoothing_a;
  std::vector<std::optional<Matrix>> smoothing_b;
};

/// Owns the task, server, and clients of one experiment.
class Simulation {
 public:
  Simulation(const ExperimentConfig& config, GeneratedTask generated);
  /// Generates the task from the config seed.
  explicit Simulation(const ExperimentConfig& config);

  /// Executes round server.round + 1. `execution_order` permutes the order
  /// in which clients are trained; results are folded by client id regardless.
  analysis::MetricsRecord run_round(std::span<const int> execution_order = {});

  /// Metrics of the current global model without advancing.
  analysis::MetricsRecord snapshot() const;

  const ServerState& server() const { return server_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const SyntheticTask& task() const { return task_; }
  const ExperimentConfig& config() const { return config_; }
  const ModelState& initial_model() const { return initial_; }

 private:
  std::vector<scoring::LayerScores> score_at_global(int t) const;
  std::vector<LocalResult> train_clients(const std::vector<ModeVector>& modes, int t,
                                         std::span<const int> execution_order) const;

  ExperimentConfig config_;
  SyntheticTask task_;
  ModelState initial_;
  ServerState server_;
  std::vector<ClientState> clients_;
  std::vector<double> shard_weights_;
  RngStream master_;
};

struct Trace {
  analysis::MetricsRecord initial;
  std::vector<analysis::MetricsRecord> rounds;
  double final_epsilon = 0.0;
};

Trace run_experiment(const ExperimentConfig& config);

}  // namespace aslora::federation
