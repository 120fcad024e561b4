#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aslora/dp.hpp"
#include "aslora/model.hpp"
#include "aslora/scoring.hpp"
#include "aslora/selection.hpp"

namespace aslora {

/// Raised for invalid configuration input; `field()` names the offending key
/// as "section.key".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class StrategyKind { FedLoRA, FFA_LoRA, RoLoRA, FixedSchedule, AS_LoRA, UniformRandom };

struct StrategyConfig {
  StrategyKind kind = StrategyKind::AS_LoRA;
  /// FixedSchedule letters over {A, B}, cycled.
  std::string pattern = "BA";
  scoring::ScoreEstimator estimator;
  bool projection = true;
  /// Under DP, score from the noised gradients of the final local step.
  bool scores_from_noised = true;
};

struct FederationConfig {
  int K = 6;
  int T = 100;
  int tau = 10;
  double eta = 0.05;
  double partition_alpha = 0.5;
  bool two_pass = false;
  dp::SmoothingConfig smoothing;
  bool parallel_clients = false;
};

struct OutputConfig {
  std::string dir = ".";
  std::string prefix = "trace";
};

struct ExperimentConfig {
  TaskOptions task;
  std::uint64_t seed = 1;
  dp::DpConfig dp;
  std::optional<double> target_epsilon;
  StrategyConfig strategy;
  selection::SelectionConfig selection;
  /// Warm-up length is ceil(warmup_ratio * T) unless warmup_rounds >= 0.
  double warmup_ratio = 0.1;
  int warmup_rounds = -1;
  FederationConfig federation;
  OutputConfig output;

  int resolved_warmup() const;
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Sectioned key = value text. '#' and ';' start comments.
ExperimentConfig parse_config_ini(const std::string& text);
/// JSON object with the same sections and keys.
ExperimentConfig parse_config_json(const std::string& text);
/// Dispatches on the first non-space character ('{' means JSON).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical INI rendering; parse_config_ini(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& config);
std::string to_json(const ExperimentConfig& config);

/// Sets one numeric field addressed as "section.key" (used by sweeps).
void set_numeric_field(ExperimentConfig& config, const std::string& name, double value);

std::string to_string(StrategyKind kind);

}  // namespace aslora
