#pragma once

#include <iosfwd>
#include <string>

#include "aslora/config.hpp"
#include "aslora/federation.hpp"

namespace aslora {

/// Header: round,mode_bits,loss,r_rec,delta_1..delta_N,agg_error,eps,sA_1..sA_N,sB_1..sB_N.
/// One row per executed round; the initial snapshot lives in the sidecar.
void write_trace_csv(std::ostream& out, const federation::Trace& trace, int num_layers);

/// Config echo plus initial and final summaries.
std::string trace_sidecar_json(const ExperimentConfig& config, const federation::Trace& trace);

struct TracePaths {
  std::string csv;
  std::string json;
};

/// Writes <dir>/<prefix>.csv and <dir>/<prefix>.json, creating dir if needed.
TracePaths write_trace_files(const ExperimentConfig& config, const federation::Trace& trace);

}  // namespace aslora
