#pragma once

#include <cmath>

#include "aslora/model.hpp"

namespace testing_helpers {

inline aslora::TaskOptions small_options(int layers = 1, int d = 12, int r = 3, int m = 48) {
  aslora::TaskOptions o;
  o.num_layers = layers;
  o.d_in = d;
  o.d_out = d;
  o.rank = r;
  o.alpha_scale = r;
  o.num_samples = m;
  return o;
}

/// Noiseless task whose B is moved off zero so both factors matter.
inline aslora::GeneratedTask random_point(std::uint64_t seed, int layers = 1, int d = 12, int r = 3, int m = 48) {
  aslora::RngStream rng(seed);
  aslora::GeneratedTask g = aslora::make_synthetic_task(small_options(layers, d, r, m), rng);
  for (auto& l : g.model.layers) l.B = aslora::gaussian_matrix(l.B.rows(), l.B.cols(), 1.0 / std::sqrt(r), rng);
  return g;
}

/// Moves every layer to its planted optimum.
inline void to_optimum(aslora::GeneratedTask& g) {
  for (std::size_t i = 0; i < g.model.layers.size(); ++i) {
    g.model.layers[i].A = g.task.Astar[i];
    g.model.layers[i].B = g.task.Bstar[i];
  }
}

}  // namespace testing_helpers
