#include "aslora/trace.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "json.hpp"

namespace aslora {

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::ordered_json record_json(const analysis::MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["loss"] = r.loss;
  j["r_rec"] = r.r_rec;
  j["delta"] = r.delta;
  j["agg_error"] = r.agg_error;
  j["eps"] = std::isfinite(r.epsilon) ? nlohmann::ordered_json(r.epsilon) : nlohmann::ordered_json("inf");
  j["mode_bits"] = r.mode_bits;
  j["smoothed_a"] = r.smoothed_a;
  j["smoothed_b"] = r.smoothed_b;
  return j;
}

}  // namespace

void write_trace_csv(std::ostream& out, const federation::Trace& trace, int num_layers) {
  out << "round,mode_bits,loss,r_rec";
  for (int n = 1; n <= num_layers; ++n) out << ",delta_" << n;
  out << ",agg_error,eps";
  for (int n = 1; n <= num_layers; ++n) out << ",sA_" << n;
  for (int n = 1; n <= num_layers; ++n) out << ",sB_" << n;
  out << '\n';
  for (const auto& r : trace.rounds) {
    out << r.round << ',' << r.mode_bits << ',' << num(r.loss) << ',' << num(r.r_rec);
    for (double d : r.delta) out << ',' << num(d);
    out << ',' << num(r.agg_error) << ',' << num(r.epsilon);
    for (double s : r.smoothed_a) out << ',' << num(s);
    for (double s : r.smoothed_b) out << ',' << num(s);
    out << '\n';
  }
}

std::string trace_sidecar_json(const ExperimentConfig& config, const federation::Trace& trace) {
  nlohmann::ordered_json doc;
  doc["format"] = "aslora-trace v1";
  doc["config"] = nlohmann::ordered_json::parse(to_json(config));
  doc["rounds"] = trace.rounds.size();
  doc["initial"] = record_json(trace.initial);
  if (!trace.rounds.empty()) doc["final"] = record_json(trace.rounds.back());
  doc["final_epsilon"] =
      std::isfinite(trace.final_epsilon) ? nlohmann::ordered_json(trace.final_epsilon) : nlohmann::ordered_json("inf");
  return doc.dump(2) + "\n";
}

TracePaths write_trace_files(const ExperimentConfig& config, const federation::Trace& trace) {
  namespace fs = std::filesystem;
  fs::create_directories(config.output.dir);
  TracePaths paths{(fs::path(config.output.dir) / (config.output.prefix + ".csv")).string(),
                   (fs::path(config.output.dir) / (config.output.prefix + ".json")).string()};
  std::ofstream csv(paths.csv, std::ios::binary);
  if (!csv) throw Error("cannot write " + paths.csv);
  write_trace_csv(csv, trace, config.task.num_layers);
  std::ofstream json(paths.json, std::ios::binary);
  if (!json) throw Error("cannot write " + paths.json);
  json << trace_sidecar_json(config, trace);
  return paths;
}

}  // namespace aslora
