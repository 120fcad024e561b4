#include "aslora/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <Eigen/QR>

#include "aslora/analysis.hpp"
#include "aslora/config.hpp"
#include "aslora/dp.hpp"
#include "aslora/federation.hpp"
#include "aslora/model.hpp"
#include "aslora/scoring.hpp"
#include "aslora/selection.hpp"
#include "aslora/trace.hpp"

namespace aslora::verify {

namespace {

using Outcome = std::pair<bool, std::string>;

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Columns orthonormal, d x k.
Matrix orthonormal_columns(int d, int k, RngStream& rng) {
  const Matrix g = gaussian_matrix(d, k, 1.0, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(d, k);
}

// Random single-layer instance with both factors non-zero.
GeneratedTask random_layer(int d, int r, int m, RngStream& rng) {
  TaskOptions o;
  o.num_layers = 1;
  o.d_in = d;
  o.d_out = d;
  o.rank = r;
  o.alpha_scale = static_cast<double>(r);
  o.num_samples = m;
  o.label_noise = 0.1;
  GeneratedTask g = make_synthetic_task(o, rng);
  g.model.layers[0].B = gaussian_matrix(d, r, 1.0 / std::sqrt(r), rng);
  return g;
}

// ---- AC1 -------------------------------------------------------------------

Outcome check_gradients() {
  RngStream rng = RngStream(101).derive("gradients");
  const double h = 1e-5;
  double worst_grad = 0.0;  // excess over the tolerance, <= 0 passes
  double worst_hess = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    RngStream tr = rng.derive(static_cast<std::uint64_t>(trial));
    GeneratedTask g = random_layer(16, 2, 32, tr);
    LoraLayer layer = g.model.layers[0];
    const std::vector<int> idx = all_indices(32);
    const LayerGrads grads = layer_grads(layer, g.task, 0, idx);
    for (Component c : {Component::A, Component::B}) {
      const Matrix& analytic = c == Component::A ? grads.gA : grads.gB;
      Matrix& p = layer.factor(c);
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        const double keep = p.data()[k];
        p.data()[k] = keep + h;
        const double up = layer_loss(layer, g.task, 0, idx);
        p.data()[k] = keep - h;
        const double down = layer_loss(layer, g.task, 0, idx);
        p.data()[k] = keep;
        const double fd = (up - down) / (2 * h);
        const double a = analytic.data()[k];
        const double tol = std::max(1e-7, 1e-4 * std::abs(a));
        worst_grad = std::max(worst_grad, std::abs(a - fd) / tol);
      }
      // Hessian action against a central difference of the gradient.
      const Matrix V = gaussian_matrix(p.rows(), p.cols(), 1.0, tr);
      const Matrix hv = hessian_action(layer, g.task, 0, idx, c, V);
      LoraLayer plus = layer;
      LoraLayer minus = layer;
      plus.factor(c) += h * V;
      minus.factor(c) -= h * V;
      const Matrix gp = c == Component::A ? grad_A(plus, g.task, 0, idx) : grad_B(plus, g.task, 0, idx);
      const Matrix gm = c == Component::A ? grad_A(minus, g.task, 0, idx) : grad_B(minus, g.task, 0, idx);
      const Matrix fd = (gp - gm) / (2 * h);
      worst_hess = std::max(worst_hess, frobenius_norm(hv - fd) / frobenius_norm(fd));
    }
  }
  const bool ok = worst_grad <= 1.0 && worst_hess <= 1e-4;
  return {ok, fmt("max grad err/tol=%.3g, max hessian rel err=%.3g", worst_grad, worst_hess)};
}

// ---- AC2 -------------------------------------------------------------------

Outcome check_noise_slopes() {
  RngStream rng = RngStream(202).derive("noise");
  const Matrix B = gaussian_matrix(32, 8, 1.0 / std::sqrt(8.0), rng);
  const Matrix A = gaussian_matrix(8, 32, 1.0 / std::sqrt(32.0), rng);
  const std::vector<double> sigmas{0.5, 1.0, 2.0, 4.0, 8.0};
  const auto norms = dp::noise_decomposition(B, A, sigmas, 2.0, rng, 500);
  std::vector<double> cross;
  std::vector<double> single;
  for (const auto& n : norms) {
    cross.push_back(n.cross);
    single.push_back(n.noise_times_a);
  }
  const double s_cross = loglog_slope(sigmas, cross);
  const double s_single = loglog_slope(sigmas, single);
  const bool ok = std::abs(s_cross - 2.0) <= 0.15 && std::abs(s_single - 1.0) <= 0.15;
  return {ok, fmt("slope ||N_B N_A||=%.4f, slope ||N_B A||=%.4f", s_cross, s_single)};
}

// ---- AC3 -------------------------------------------------------------------

Outcome check_aggregation_dichotomy() {
  const std::vector<Matrix> Bs{Matrix{{1.0}, {0.0}}, Matrix{{0.0}, {1.0}}};
  const std::vector<Matrix> As{Matrix{{1.0, 0.0}}, Matrix{{0.0, 1.0}}};
  const double hand = federation::aggregation_error(Bs, As);

  RngStream rng = RngStream(303).derive("dichotomy");
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    RngStream tr = rng.derive(static_cast<std::uint64_t>(trial));
    TaskOptions o;
    o.num_layers = 2;
    o.d_in = 12;
    o.d_out = 10;
    o.rank = 3;
    o.alpha_scale = 3;
    o.num_samples = 120;
    o.label_noise = 0.2;
    GeneratedTask g = make_synthetic_task(o, tr);
    for (auto& l : g.model.layers) l.B = gaussian_matrix(l.B.rows(), l.B.cols(), 1.0, tr);
    const int K = 4;
    const auto shards = federation::partition_dirichlet(o.num_samples, K, 0.3, tr);
    federation::LocalTrainOptions opts;
    opts.tau = 3;
    opts.eta = 0.05;
    opts.dp.enabled = true;
    opts.dp.sampling_rate = 0.5;
    const scoring::ProjectionSet proj = scoring::make_projection_set(g.model, 7, false);
    for (std::uint8_t bit : {std::uint8_t{0}, std::uint8_t{1}}) {
      const selection::ModeVector mode = selection::ModeVector::uniform(2, bit);
      std::vector<ModelState> locals;
      for (int k = 0; k < K; ++k) {
        federation::ClientState c;
        c.id = k;
        c.shard = shards[static_cast<std::size_t>(k)];
        c.local = g.model;
        c.rng = tr.derive("client").derive(static_cast<std::uint64_t>(k)).derive(bit);
        locals.push_back(federation::local_train(c, g.task, mode, opts, proj).model);
      }
      for (int n = 0; n < 2; ++n) {
        std::vector<Matrix> b;
        std::vector<Matrix> a;
        for (const auto& m : locals) {
          b.push_back(m.layers[static_cast<std::size_t>(n)].B);
          a.push_back(m.layers[static_cast<std::size_t>(n)].A);
        }
        worst = std::max(worst, federation::aggregation_error(b, a));
      }
    }
  }
  const bool ok = hand == 0.5 && worst <= 1e-12;
  return {ok, fmt("hand example=%.17g, max one-sided error=%.3g", hand, worst)};
}

// ---- AC4 / AC5 shared task ---------------------------------------------------

GeneratedTask floor_task() {
  TaskOptions o;
  o.num_layers = 1;
  o.d_in = 16;
  o.d_out = 16;
  o.rank = 2;
  o.alpha_scale = 2;  // s = 1
  o.num_samples = 64;
  o.delta0_targets = {0.5};
  o.delta0_relative = true;
  RngStream rng = RngStream(404).derive("floor-task");
  return make_synthetic_task(o, rng);
}

ExperimentConfig single_client_config(const GeneratedTask& g, int T) {
  ExperimentConfig c;
  const LoraLayer& l = g.model.layers[0];
  c.task.num_layers = g.model.num_layers();
  c.task.d_in = static_cast<int>(l.A.cols());
  c.task.d_out = static_cast<int>(l.B.rows());
  c.task.rank = l.rank;
  c.task.alpha_scale = l.alpha_scale;
  c.task.num_samples = g.task.num_samples();
  c.seed = 17;
  c.dp.enabled = false;
  c.federation.K = 1;
  c.federation.tau = 1;
  c.federation.T = T;
  c.strategy.projection = false;
  return c;
}

// Largest eigenvalue of the B-block Hessian (s^2/m) A X X^T A^T, by dense solve.
double b_block_lipschitz(const LoraLayer& layer, const Matrix& X) {
  const Matrix ax = layer.A * X;
  const Matrix h = (layer.scale() * layer.scale() / static_cast<double>(X.cols())) * ax * ax.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  return es.eigenvalues().maxCoeff();
}

Outcome check_ffa_floor() {
  const GeneratedTask g = floor_task();
  const LoraLayer& l0 = g.model.layers[0];
  const double L = b_block_lipschitz(l0, g.task.X[0]);
  ExperimentConfig c = single_client_config(g, 2000);
  c.strategy.kind = StrategyKind::FFA_LoRA;
  c.federation.eta = 1.0 / L;
  federation::Simulation sim(c, g);
  analysis::MetricsRecord last;
  for (int t = 1; t <= 2000; ++t) last = sim.run_round();

  const analysis::FfaFloor oracle = analysis::ffa_floor_oracle(g.task, l0.A, 0);
  // Independent floor: project the planted signal off row(A0 X) with a pseudoinverse.
  const Matrix Z = l0.A * g.task.X[0];
  const Matrix target = l0.scale() * g.task.Bstar[0] * g.task.Astar[0] * g.task.X[0];
  const Matrix resid = target - target * pseudoinverse(Z) * Z;
  const double floor_indep = 0.5 * resid.squaredNorm();
  // R_rec carries no 1/2, the floor does; with one layer R_rec -> 2 * floor.
  const double ratio = last.r_rec / (2.0 * oracle.floor);
  const bool oracles_agree = std::abs(floor_indep - oracle.floor) <= 1e-8 * std::max(1.0, oracle.floor);
  const bool ok = ratio >= 0.95 && ratio <= 1.05 && oracles_agree;
  return {ok, fmt("R_rec=%.6g, 2*floor=%.6g, ratio=%.6f, eta=1/L=%.4g, oracle cross-check diff=%.2g", last.r_rec,
                  2.0 * oracle.floor, ratio, 1.0 / L, std::abs(floor_indep - oracle.floor))};
}

Outcome check_floor_elimination() {
  const GeneratedTask g = floor_task();
  const int T = 500;
  ExperimentConfig c = single_client_config(g, T);
  c.strategy.kind = StrategyKind::AS_LoRA;
  c.selection.policy = selection::Policy::Argmax;
  c.strategy.estimator.kind = scoring::EstimatorKind::HVP;
  c.federation.eta = 0.05;
  c.strategy.estimator.eta = c.federation.eta;
  federation::Simulation sim(c, g);
  const double delta0 = sim.snapshot().delta[0];
  double prev = delta0;
  double worst_increase = 0.0;
  int a_rounds = 0;
  double final_delta = delta0;
  for (int t = 1; t <= T; ++t) {
    const analysis::MetricsRecord r = sim.run_round();
    if (r.mode_bits[0] == '0') ++a_rounds;
    worst_increase = std::max(worst_increase, r.delta[0] - prev);
    prev = r.delta[0];
    final_delta = r.delta[0];
  }
  const double frac_a = static_cast<double>(a_rounds) / T;
  // Tolerance on monotonicity: subspace angles are computed via an SVD.
  const bool monotone = worst_increase <= 1e-9 * delta0;
  const bool ok = final_delta <= 1e-3 * delta0 && monotone && frac_a >= 0.4;
  return {ok, fmt("delta0=%.4g, deltaT=%.3g (ratio %.3g), A-active=%.1f%%, max round increase=%.3g", delta0, final_delta,
                  final_delta / delta0, 100 * frac_a, worst_increase)};
}

// ---- AC6 -------------------------------------------------------------------

Outcome check_estimator_agreement() {
  RngStream rng = RngStream(606).derive("estimators");
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    RngStream tr = rng.derive(static_cast<std::uint64_t>(trial));
    const GeneratedTask g = random_layer(12, 3, 48, tr);
    const LoraLayer& layer = g.model.layers[0];
    const std::vector<int> idx = all_indices(48);
    const LayerGrads grads = layer_grads(layer, g.task, 0, idx);
    const scoring::ProjectionSet proj = scoring::make_projection_set(g.model, 11 + static_cast<std::uint64_t>(trial));
    const auto [ga, gb] = scoring::project_gradients(grads.gA, grads.gB, proj, 0);
    const double eta = 0.05;
    for (Component c : {Component::A, Component::B}) {
      const Matrix& gp = c == Component::A ? ga : gb;
      const double hvp = scoring::score_hvp(gp, layer, g.task, 0, idx, c, eta);
      const double curv = scoring::fd_curvature(layer, g.task, 0, idx, c, scoring::fd_direction(gp), 1e-4, false);
      const double fd = scoring::score_fd(gp, curv, eta);
      worst = std::max(worst, std::abs(fd - hvp) / std::abs(hvp));
    }
  }
  return {worst <= 1e-3, fmt("max relative disagreement=%.3g", worst)};
}

// ---- AC7 -------------------------------------------------------------------

Outcome check_privacy_formula() {
  // 0.1^2 * 2^2 * 100 * ln(1e5) / 2^2 = ln(1e5) = 5 ln 10.
  const double hand = 5.0 * 2.302585092994046;
  const double eps = dp::epsilon_bound(0.1, 2.0, 2.0, 100, 1e-5);
  RngStream rng = RngStream(707).derive("privacy");
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const double q = 0.01 + 0.98 * rng.uniform();
    const double C = 0.1 + 5 * rng.uniform();
    const double sigma = 0.2 + 5 * rng.uniform();
    const long T = 1 + static_cast<long>(500 * rng.uniform());
    const double delta = std::pow(10.0, -1.0 - 8 * rng.uniform());
    const double base = dp::epsilon_bound(q, C, sigma, T, delta);
    const double f = 1.0 + 0.5 * rng.uniform();
    if (!(dp::epsilon_bound(std::min(1.0, q * f), C, sigma, T, delta) >= base)) ++violations;
    if (!(dp::epsilon_bound(q, C * f, sigma, T, delta) >= base)) ++violations;
    if (!(dp::epsilon_bound(q, C, sigma * f, T, delta) <= base)) ++violations;
    if (!(dp::epsilon_bound(q, C, sigma, T + 1, delta) >= base)) ++violations;
    if (!(dp::epsilon_bound(q, C, sigma, T, delta / f) >= base)) ++violations;
  }
  const bool ok = std::abs(eps - hand) <= 1e-3 && std::abs(eps - 11.5129) <= 1e-3 && violations == 0;
  return {ok, fmt("epsilon=%.6f, oracle=%.6f, monotonicity violations=%d", eps, hand, violations)};
}

// ---- AC8 -------------------------------------------------------------------

Outcome check_selection_mechanics() {
  int warm_bad = 0;
  RngStream rng = RngStream(808).derive("selection");
  for (int layers : {1, 3, 8}) {
    selection::SelectionConfig cfg;
    cfg.warmup_rounds = 10;
    selection::SelectionState st(cfg, layers);
    scoring::LayerScores s;
    for (int n = 0; n < layers; ++n) {
      s.sA.push_back(rng.normal());
      s.sB.push_back(rng.normal());
    }
    st.update(s);
    for (int t = 1; t <= cfg.warmup_rounds; ++t) {
      const selection::ModeVector mv = selection::select_modes(st, t, rng);
      for (auto b : mv.bits) warm_bad += b != static_cast<std::uint8_t>(t % 2);
    }
  }
  // Temperature by repeated multiplication, independent of pow.
  double worst_temp = 0.0;
  double running = 2.0;
  for (int t = 1; t <= 100; ++t) {
    if (t > 10) running *= 0.95;
    const double expected = t <= 10 ? 2.0 : std::max(0.2, running);
    worst_temp = std::max(worst_temp, std::abs(selection::temperature(t, 2.0, 0.2, 0.95, 10) - expected));
  }
  double worst_sum = 0.0;
  bool finite = true;
  for (double gap : {-1e4, -1e2, -1.0, 0.0, 1.0, 1e2, 1e4}) {
    for (double T : {2.0, 0.2, 1e-3}) {
      const double base = rng.normal();
      const double pa = selection::select_probability(base + gap, base, T);
      const double pb = selection::select_probability(base, base + gap, T);
      finite = finite && std::isfinite(pa) && std::isfinite(pb);
      worst_sum = std::max(worst_sum, std::abs(pa + pb - 1.0));
    }
  }
  const bool ok = warm_bad == 0 && worst_temp <= 1e-12 && finite && worst_sum <= 1e-12;
  return {ok, fmt("warm-up mismatches=%d, max temperature err=%.3g, max |P(A)+P(B)-1|=%.3g", warm_bad, worst_temp, worst_sum)};
}

// ---- AC9 -------------------------------------------------------------------

// One-layer, rank-1 quadratic with whitened inputs (X X^T = m I), s = 1,
// ||B||^2 = lambda_A and ||A||^2 = lambda_B so the block Hessians are
// lambda_A I and lambda_B I. The residual E = c1 u p^T + c2 q v^T makes
// ||grad_A|| = ||grad_B|| = gnorm.
GeneratedTask flat_instance(RngStream& rng, double lambda_a, double lambda_b, double gnorm) {
  const int d = 8;
  const int m = 16;
  const Matrix uq = orthonormal_columns(d, 2, rng);
  const Matrix vp = orthonormal_columns(d, 2, rng);
  const Matrix u = uq.col(0);
  const Matrix q = uq.col(1);
  const Matrix v = vp.col(0);
  const Matrix p = vp.col(1);
  const Matrix X = std::sqrt(static_cast<double>(m)) * orthonormal_columns(m, d, rng).transpose();

  LoraLayer layer;
  layer.rank = 1;
  layer.alpha_scale = 1.0;
  layer.W0 = Matrix::Zero(d, d);
  layer.B = std::sqrt(lambda_a) * u;
  layer.A = std::sqrt(lambda_b) * v.transpose();
  const Matrix E = (gnorm / std::sqrt(lambda_a)) * u * p.transpose() + (gnorm / std::sqrt(lambda_b)) * q * v.transpose();

  GeneratedTask g;
  g.task.scale = 1.0;
  g.task.X.push_back(X);
  g.task.Y.push_back((layer.B * layer.A - E) * X);
  g.task.Bstar.push_back(layer.B);
  g.task.Astar.push_back(layer.A);
  g.model.layers.push_back(layer);
  g.model.trainable.push_back({});
  return g;
}

Outcome check_flatness_bias() {
  const double eta = 0.05;
  RngStream rng = RngStream(909).derive("flatness");
  int argmax_b = 0;
  int softmax_b = 0;
  for (int trial = 0; trial < 100; ++trial) {
    RngStream tr = rng.derive(static_cast<std::uint64_t>(trial));
    const GeneratedTask g = flat_instance(tr, 10.0, 1.0, std::sqrt(10.0));
    const LoraLayer& layer = g.model.layers[0];
    const std::vector<int> idx = all_indices(g.task.num_samples());
    const LayerGrads grads = layer_grads(layer, g.task, 0, idx);
    scoring::LayerScores s;
    s.sA.push_back(scoring::score_hvp(grads.gA, layer, g.task, 0, idx, Component::A, eta));
    s.sB.push_back(scoring::score_hvp(grads.gB, layer, g.task, 0, idx, Component::B, eta));
    selection::SelectionConfig cfg;
    cfg.warmup_rounds = 0;
    cfg.T0 = 0.2;
    cfg.T_min = 0.2;
    cfg.policy = selection::Policy::Argmax;
    selection::SelectionState st(cfg, 1);
    st.update(s);
    argmax_b += selection::select_modes(st, 1, tr).bits[0] == 1;
    st.config.policy = selection::Policy::SoftmaxSample;
    softmax_b += selection::select_modes(st, 1, tr).bits[0] == 1;
  }

  // Train the same instance under AS-LoRA and under always-A.
  RngStream inst_rng = rng.derive("train-instance");
  const GeneratedTask g = flat_instance(inst_rng, 10.0, 1.0, std::sqrt(10.0));
  auto train = [&](StrategyKind kind) {
    ExperimentConfig c = single_client_config(g, 60);
    c.strategy.kind = kind;
    c.strategy.pattern = "A";
    c.strategy.estimator.kind = scoring::EstimatorKind::HVP;
    c.strategy.estimator.eta = eta;
    c.selection.policy = selection::Policy::Argmax;
    c.warmup_rounds = 0;
    c.federation.eta = eta;
    federation::Simulation sim(c, g);
    for (int t = 1; t <= 60; ++t) sim.run_round();
    return sim.server().global;
  };
  const ModelState as_model = train(StrategyKind::AS_LoRA);
  const ModelState a_model = train(StrategyKind::FixedSchedule);
  const double rho = 0.05;
  const double ps_as = analysis::perturbation_sharpness(as_model, g.task, rho).value;
  const double ps_a = analysis::perturbation_sharpness(a_model, g.task, rho).value;
  const bool ok = argmax_b == 100 && softmax_b >= 90 && ps_as <= ps_a;
  return {ok, fmt("argmax picks B %d/100, softmax(T=0.2) picks B %d/100, PS AS-LoRA=%.4g vs always-A=%.4g", argmax_b,
                  softmax_b, ps_as, ps_a)};
}

// ---- AC10 ------------------------------------------------------------------

Outcome check_convergence_dominance() {
  double sum_as = 0.0;
  double sum_rand = 0.0;
  int negative_gain_runs = 0;
  for (int seed = 0; seed < 20; ++seed) {
    ExperimentConfig c;
    c.seed = 1000 + static_cast<std::uint64_t>(seed);
    c.task.num_layers = 4;
    c.task.d_in = 16;
    c.task.d_out = 16;
    c.task.rank = 2;
    c.task.alpha_scale = 2;
    c.task.num_samples = 64;
    c.task.whiten_inputs = true;
    c.dp.enabled = false;
    c.federation.K = 2;
    c.federation.tau = 1;
    c.federation.T = 200;
    c.federation.eta = 0.05;
    c.strategy.estimator.kind = scoring::EstimatorKind::HVP;
    c.strategy.estimator.eta = c.federation.eta;
    c.selection.policy = selection::Policy::Argmax;

    c.strategy.kind = StrategyKind::AS_LoRA;
    const federation::Trace as = federation::run_experiment(c);
    c.strategy.kind = StrategyKind::UniformRandom;
    const federation::Trace rnd = federation::run_experiment(c);
    sum_as += as.rounds.back().loss;
    sum_rand += rnd.rounds.back().loss;

    double gain = 0.0;
    for (const auto& r : as.rounds) gain += analysis::adaptive_gain(r.raw_a, r.raw_b).mean;
    gain /= static_cast<double>(as.rounds.size());
    if (!(gain >= 0.0)) ++negative_gain_runs;
  }
  const double mean_as = sum_as / 20;
  const double mean_rand = sum_rand / 20;
  const bool ok = mean_as <= mean_rand && negative_gain_runs == 0;
  return {ok, fmt("mean final loss AS-LoRA=%.4g, uniform-random=%.4g, runs with negative gain=%d", mean_as, mean_rand,
                  negative_gain_runs)};
}

// ---- AC11 ------------------------------------------------------------------

std::string csv_of(const federation::Trace& trace, int layers) {
  std::ostringstream os;
  write_trace_csv(os, trace, layers);
  return os.str();
}

Outcome check_determinism() {
  ExperimentConfig c;
  c.seed = 1111;
  c.task.num_layers = 3;
  c.task.d_in = 16;
  c.task.d_out = 16;
  c.task.rank = 4;
  c.task.alpha_scale = 4;
  c.task.num_samples = 256;
  c.dp.enabled = true;
  c.dp.sampling_rate = 0.2;
  c.federation.K = 4;
  c.federation.tau = 3;
  c.federation.T = 20;
  c.federation.eta = 0.1;
  c.strategy.estimator.kind = scoring::EstimatorKind::FD;

  const std::string serial = csv_of(federation::run_experiment(c), 3);
  const std::string serial2 = csv_of(federation::run_experiment(c), 3);
  c.federation.parallel_clients = true;
  const std::string par = csv_of(federation::run_experiment(c), 3);
  const std::string par2 = csv_of(federation::run_experiment(c), 3);

  // Reversed client order with threads.
  federation::Simulation sim(c);
  federation::Trace rev;
  rev.initial = sim.snapshot();
  const std::vector<int> order{3, 2, 1, 0};
  for (int t = 1; t <= c.federation.T; ++t) rev.rounds.push_back(sim.run_round(order));
  rev.final_epsilon = dp::epsilon_bound(c.dp.sampling_rate, c.dp.clip_norm, c.dp.noise_multiplier, c.federation.T, c.dp.delta);
  const std::string reversed = csv_of(rev, 3);

  const bool ok = serial == serial2 && par == par2 && serial == par && serial == reversed;
  return {ok, fmt("serial repeat %s, parallel repeat %s, serial vs parallel %s, reversed order %s (%zu bytes)",
                  serial == serial2 ? "identical" : "DIFFER", par == par2 ? "identical" : "DIFFER",
                  serial == par ? "identical" : "DIFFER", serial == reversed ? "identical" : "DIFFER", serial.size())};
}

// ---- AC12 ------------------------------------------------------------------

double max_over_median(const Matrix& g) {
  std::vector<double> a(static_cast<std::size_t>(g.size()));
  for (Eigen::Index i = 0; i < g.size(); ++i) a[static_cast<std::size_t>(i)] = std::abs(g.data()[i]);
  std::sort(a.begin(), a.end());
  const std::size_t n = a.size();
  const double median = n % 2 ? a[n / 2] : 0.5 * (a[n / 2 - 1] + a[n / 2]);
  return a.back() / median;
}

Outcome check_projection() {
  const int d = 64;
  const int r = 8;
  RngStream rng = RngStream(1212).derive("projection");
  ModelState shape;
  LoraLayer l;
  l.rank = r;
  l.alpha_scale = r;
  l.W0 = Matrix::Zero(d, d);
  l.A = Matrix::Zero(r, d);
  l.B = Matrix::Zero(d, r);
  shape.layers.push_back(l);
  shape.trainable.push_back({});

  const Matrix g = gaussian_matrix(r, d, 1.0, rng);
  const Matrix gb = gaussian_matrix(d, r, 1.0, rng);
  double sum_a = 0.0;
  double sum_b = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const scoring::ProjectionSet p = scoring::make_projection_set(shape, rng.next_u64());
    const auto [pa, pb] = scoring::project_gradients(g, gb, p, 0);
    sum_a += pa.squaredNorm();
    sum_b += pb.squaredNorm();
  }
  const double ratio_a = sum_a / 1000 / g.squaredNorm();
  const double ratio_b = sum_b / 1000 / gb.squaredNorm();

  double worst_reduction = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 100; ++i) {
    Matrix outlier = gaussian_matrix(r, d, 0.01, rng);
    const int channel = static_cast<int>(rng.next_u64() % d);
    outlier.col(channel).array() += 1.0;
    const scoring::ProjectionSet p = scoring::make_projection_set(shape, rng.next_u64());
    const auto [pa, pb] = scoring::project_gradients(outlier, gb, p, 0);
    worst_reduction = std::min(worst_reduction, max_over_median(outlier) / max_over_median(pa));
  }
  const bool ok = std::abs(ratio_a - 1.0) <= 0.05 && std::abs(ratio_b - 1.0) <= 0.05 && worst_reduction >= 5.0;
  return {ok, fmt("E||gR||^2/||g||^2: A=%.4f B=%.4f, min outlier max/median reduction=%.1fx", ratio_a, ratio_b,
                  worst_reduction)};
}

const std::vector<Check>& all_checks() {
  static const std::vector<Check> checks{
      {"AC1", "gradient-hessian-correctness", 5, check_gradients},
      {"AC2", "noise-amplification-slopes", 10, check_noise_slopes},
      {"AC3", "aggregation-error-dichotomy", 1, check_aggregation_dichotomy},
      {"AC4", "ffa-reconstruction-floor", 30, check_ffa_floor},
      {"AC5", "floor-elimination", 60, check_floor_elimination},
      {"AC6", "estimator-agreement", 5, check_estimator_agreement},
      {"AC7", "privacy-formula", 1, check_privacy_formula},
      {"AC8", "selection-mechanics", 1, check_selection_mechanics},
      {"AC9", "flatness-bias", 10, check_flatness_bias},
      {"AC10", "convergence-dominance", 60, check_convergence_dominance},
      {"AC11", "determinism-replay", 30, check_determinism},
      {"AC12", "random-projection", 5, check_projection},
  };
  return checks;
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"gradients", "dp",          "scoring",  "selection",
                                              "floor",     "convergence", "flatness", "all"};
  return names;
}

bool is_suite(const std::string& name) {
  const auto& n = suite_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

std::vector<Check> suite(const std::string& name) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> members{
      {"gradients", {"AC1"}},
      {"dp", {"AC2", "AC3", "AC7"}},
      {"scoring", {"AC6", "AC12"}},
      {"selection", {"AC8"}},
      {"floor", {"AC4", "AC5"}},
      {"convergence", {"AC10", "AC11"}},
      {"flatness", {"AC9"}},
  };
  if (name == "all") return all_checks();
  for (const auto& [suite_name, ids] : members) {
    if (suite_name != name) continue;
    std::vector<Check> out;
    for (const auto& c : all_checks()) {
      if (std::find(ids.begin(), ids.end(), c.id) != ids.end()) out.push_back(c);
    }
    return out;
  }
  throw std::invalid_argument("unknown suite '" + name + "'");
}

CheckResult run_check(const Check& check) {
  CheckResult r;
  r.id = check.id;
  r.name = check.name;
  r.budget_seconds = check.budget_seconds;
  const auto start = std::chrono::steady_clock::now();
  try {
    auto [ok, detail] = check.body();
    r.passed = ok;
    r.detail = std::move(detail);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.seconds > r.budget_seconds) {
    r.passed = false;
    r.detail += " [over time budget]";
  }
  return r;
}

std::vector<CheckResult> run_suite(const std::string& name, std::ostream& out) {
  std::vector<CheckResult> results;
  for (const Check& c : suite(name)) {
    results.push_back(run_check(c));
    const CheckResult& r = results.back();
    out << (r.passed ? "PASS " : "FAIL ") << r.id << ' ' << r.name << ": " << r.detail
        << fmt(" (%.2fs / %.0fs)", r.seconds, r.budget_seconds) << std::endl;
  }
  return results;
}

}  // namespace aslora::verify
