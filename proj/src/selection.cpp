#include "aslora/selection.hpp"

#include <algorithm>
#include <cmath>

namespace aslora::selection {

std::string ModeVector::to_string() const {
  std::string s;
  s.reserve(bits.size());
  for (std::uint8_t b : bits) s.push_back(both ? '*' : static_cast<char>('0' + b));
  return s;
}

void SelectionConfig::validate() const {
  if (!(ema_coef > 0.0 && ema_coef < 1.0)) throw ParameterError("selection.ema_coef must be in (0, 1)");
  if (!(T_min > 0.0)) throw ParameterError("selection.T_min must be > 0");
  if (!(T_min <= T0)) throw ParameterError("selection.T0 must be >= T_min");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("selection.gamma must be in (0, 1)");
  if (warmup_rounds < 0) throw ParameterError("selection.warmup_rounds must be >= 0");
}

double ema_update(double prev, double next, double ema_coef) { return ema_coef * prev + (1.0 - ema_coef) * next; }

void SelectionState::update(const scoring::LayerScores& scores) {
  if (scores.num_layers() != num_layers()) throw ParameterError("selection: score layer count mismatch");
  for (std::size_t n = 0; n < smoothed_a.size(); ++n) {
    if (!initialized) {
      smoothed_a[n] = scores.sA[n];
      smoothed_b[n] = scores.sB[n];
    } else {
      smoothed_a[n] = ema_update(smoothed_a[n], scores.sA[n], config.ema_coef);
      smoothed_b[n] = ema_update(smoothed_b[n], scores.sB[n], config.ema_coef);
    }
  }
  initialized = true;
}

double temperature(int t, double T0, double T_min, double gamma, int warmup_rounds) {
  if (t <= warmup_rounds) return T0;
  return std::max(T_min, T0 * std::pow(gamma, t - warmup_rounds));
}

double select_probability(double score_a, double score_b, double T) {
  if (!(T > 0.0)) throw ParameterError("select_probability: temperature must be > 0");
  const double za = score_a / T;
  const double zb = score_b / T;
  const double top = std::max(za, zb);
  const double ea = std::exp(za - top);
  const double eb = std::exp(zb - top);
  return ea / (ea + eb);
}

ModeVector select_modes(const SelectionState& state, int t, RngStream& rng) {
  const SelectionConfig& c = state.config;
  const int n_layers = state.num_layers();
  if (t <= c.warmup_rounds) return ModeVector::uniform(n_layers, static_cast<std::uint8_t>(t % 2));

  std::vector<double> sa = state.smoothed_a;
  std::vector<double> sb = state.smoothed_b;
  if (c.granularity == Granularity::Global && n_layers > 0) {
    double ma = 0.0;
    double mb = 0.0;
    for (int n = 0; n < n_layers; ++n) {
      ma += sa[static_cast<std::size_t>(n)];
      mb += sb[static_cast<std::size_t>(n)];
    }
    std::fill(sa.begin(), sa.end(), ma / n_layers);
    std::fill(sb.begin(), sb.end(), mb / n_layers);
  }

  ModeVector mv = ModeVector::uniform(n_layers, 0);
  const double T = temperature(t, c.T0, c.T_min, c.gamma, c.warmup_rounds);
  for (int n = 0; n < n_layers; ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (c.policy == Policy::Argmax) {
      mv.bits[i] = sa[i] >= sb[i] ? 0 : 1;
    } else {
      // Bit 0 (train A) is drawn with probability P(A).
      mv.bits[i] = rng.uniform() < select_probability(sa[i], sb[i], T) ? 0 : 1;
    }
  }
  if (c.granularity == Granularity::Global) std::fill(mv.bits.begin(), mv.bits.end(), mv.bits.empty() ? 0 : mv.bits[0]);
  return mv;
}

scoring::LayerScores aggregate_client_scores(std::span<const scoring::LayerScores> per_client,
                                             std::span<const double> weights, AggregationRule rule) {
  if (per_client.empty()) throw ParameterError("aggregate_client_scores: no clients");
  const int n_layers = per_client.front().num_layers();
  for (const auto& s : per_client) {
    if (s.num_layers() != n_layers) throw ParameterError("aggregate_client_scores: layer count mismatch");
  }
  scoring::LayerScores out{std::vector<double>(static_cast<std::size_t>(n_layers), 0.0),
                           std::vector<double>(static_cast<std::size_t>(n_layers), 0.0)};
  const double k = static_cast<double>(per_client.size());
  switch (rule) {
    case AggregationRule::UniformAvg:
      for (const auto& s : per_client) {
        for (std::size_t n = 0; n < out.sA.size(); ++n) {
          out.sA[n] += s.sA[n] / k;
          out.sB[n] += s.sB[n] / k;
        }
      }
      break;
    case AggregationRule::WeightedAvg: {
      if (weights.size() != per_client.size()) throw ParameterError("aggregate_client_scores: weight count mismatch");
      double total = 0.0;
      for (double w : weights) total += w;
      if (!(total > 0.0)) throw ParameterError("aggregate_client_scores: weights must sum to > 0");
      for (std::size_t c = 0; c < per_client.size(); ++c) {
        for (std::size_t n = 0; n < out.sA.size(); ++n) {
          out.sA[n] += weights[c] / total * per_client[c].sA[n];
          out.sB[n] += weights[c] / total * per_client[c].sB[n];
        }
      }
      break;
    }
    case AggregationRule::MajorityVote:
      for (const auto& s : per_client) {
        for (std::size_t n = 0; n < out.sA.size(); ++n) {
          // Ties vote for A.
          if (s.sA[n] >= s.sB[n]) {
            out.sA[n] += 1.0;
          } else {
            out.sB[n] += 1.0;
          }
        }
      }
      break;
  }
  return out;
}

}  // namespace aslora::selection
