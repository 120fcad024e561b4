// aslora: run experiments, verification suites, and parameter sweeps.
//
// Exit codes: 0 success, 1 a verification check failed, 2 usage or config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aslora/config.hpp"
#include "aslora/federation.hpp"
#include "aslora/trace.hpp"
#include "aslora/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct Summary {
  double loss = 0.0;
  double r_rec = 0.0;
  double epsilon = 0.0;
};

Summary summarize(const aslora::federation::Trace& trace) {
  const auto& last = trace.rounds.empty() ? trace.initial : trace.rounds.back();
  return {last.loss, last.r_rec, trace.final_epsilon};
}

aslora::ExperimentConfig load_or_throw(const std::string& path) {
  if (!std::filesystem::exists(path)) throw aslora::ConfigError("", "config file not found: " + path);
  return aslora::load_config(path);
}

void apply_overrides(aslora::ExperimentConfig& config, std::optional<std::uint64_t> seed, const std::string& out) {
  if (seed) config.seed = *seed;
  if (!out.empty()) config.output.dir = out;
  config.validate();
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out) {
  aslora::ExperimentConfig config = load_or_throw(path);
  apply_overrides(config, seed, out);
  const aslora::federation::Trace trace = aslora::federation::run_experiment(config);
  const aslora::TracePaths paths = aslora::write_trace_files(config, trace);
  const Summary s = summarize(trace);
  std::printf("wrote %s and %s\n", paths.csv.c_str(), paths.json.c_str());
  std::printf("final round %d: loss=%.6g R_rec=%.6g epsilon=%.6g\n", config.federation.T, s.loss, s.r_rec, s.epsilon);
  if (config.dp.enabled && config.target_epsilon && s.epsilon > *config.target_epsilon) {
    std::fprintf(stderr, "warning: epsilon %.6g exceeds dp.target_epsilon %.6g\n", s.epsilon, *config.target_epsilon);
  }
  return kOk;
}

int cmd_verify(const std::string& suite) {
  if (!aslora::verify::is_suite(suite)) {
    std::fprintf(stderr, "error: unknown suite '%s' (expected one of:", suite.c_str());
    for (const auto& s : aslora::verify::suite_names()) std::fprintf(stderr, " %s", s.c_str());
    std::fprintf(stderr, ")\n");
    return kUsage;
  }
  const auto results = aslora::verify::run_suite(suite, std::cout);
  int failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? kOk : kCheckFailed;
}

int cmd_sweep(const std::string& path, const std::string& param, const std::vector<double>& values,
              std::optional<std::uint64_t> seed, const std::string& out) {
  if (values.empty()) throw CLI::ValidationError("--values", "empty value list");
  aslora::ExperimentConfig base = load_or_throw(path);
  apply_overrides(base, seed, out);
  // Reject a bad parameter name before any run starts.
  {
    aslora::ExperimentConfig probe = base;
    aslora::set_numeric_field(probe, param, values.front());
  }

  std::filesystem::create_directories(base.output.dir);
  const std::string summary_path = (std::filesystem::path(base.output.dir) / (base.output.prefix + "_sweep.csv")).string();
  std::ofstream summary(summary_path);
  if (!summary) throw aslora::Error("cannot write " + summary_path);
  summary << "index,param,value,seed,loss,r_rec,eps,csv\n";

  const aslora::RngStream sweep_rng = aslora::RngStream(base.seed).derive("sweep");
  for (std::size_t i = 0; i < values.size(); ++i) {
    aslora::ExperimentConfig c = base;
    aslora::set_numeric_field(c, param, values[i]);
    c.seed = sweep_rng.derive(static_cast<std::uint64_t>(i)).seed();
    c.output.prefix = base.output.prefix + "_" + std::to_string(i);
    const aslora::federation::Trace trace = aslora::federation::run_experiment(c);
    const aslora::TracePaths paths = aslora::write_trace_files(c, trace);
    const Summary s = summarize(trace);
    char row[512];
    std::snprintf(row, sizeof(row), "%zu,%s,%.17g,%llu,%.17g,%.17g,%.17g,%s\n", i, param.c_str(), values[i],
                  static_cast<unsigned long long>(c.seed), s.loss, s.r_rec, s.epsilon, paths.csv.c_str());
    summary << row;
    std::printf("%s=%g: loss=%.6g R_rec=%.6g epsilon=%.6g\n", param.c_str(), values[i], s.loss, s.r_rec, s.epsilon);
  }
  std::printf("wrote %s\n", summary_path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive-selection LoRA federated simulator"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config_path;
  std::string suite;
  std::string param;
  std::vector<double> values;

  auto* run = app.add_subcommand("run", "Run one experiment and write its trace");
  run->add_option("config", config_path, "Config file (INI or JSON)")->required();
  run->add_option("--seed", seed, "Override the master seed");
  run->add_option("--out", out, "Output directory");

  auto* verify = app.add_subcommand("verify", "Run a verification suite");
  verify->add_option("suite", suite, "gradients, dp, scoring, selection, floor, convergence, flatness, or all")->required();
  verify->add_option("--seed", seed, "Accepted for uniformity; suites use fixed seeds");

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per value of a numeric field");
  sweep->add_option("config", config_path, "Config file (INI or JSON)")->required();
  sweep->add_option("--param", param, "Field as section.key, e.g. dp.noise_multiplier")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
  sweep->add_option("--seed", seed, "Override the base seed");
  sweep->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(config_path, seed, out);
    if (*verify) return cmd_verify(suite);
    if (*sweep) return cmd_sweep(config_path, param, values, seed, out);
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const aslora::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const aslora::ParameterError& e) {
    std::fprintf(stderr, "parameter error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
