#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "aslora/federation.hpp"
#include "helpers.hpp"

using namespace aslora;
using namespace aslora::federation;
using testing_helpers::random_point;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.seed = 5;
  c.task.num_layers = 2;
  c.task.d_in = 10;
  c.task.d_out = 8;
  c.task.rank = 2;
  c.task.alpha_scale = 2;
  c.task.num_samples = 120;
  c.federation.K = 3;
  c.federation.T = 6;
  c.federation.tau = 2;
  c.federation.eta = 0.05;
  return c;
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("dirichlet partition") {
  RngStream rng(1);
  const auto one = partition_dirichlet(50, 1, 0.5, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].size() == 50);

  const auto even = partition_dirichlet(4000, 4, 1e6, rng);
  std::vector<int> seen;
  for (const auto& s : even) {
    CHECK(std::abs(static_cast<int>(s.size()) - 1000) <= 60);
    seen.insert(seen.end(), s.begin(), s.end());
  }
  std::sort(seen.begin(), seen.end());
  std::vector<int> expected(4000);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(seen == expected);

  int skewed = 0;
  for (int seed = 0; seed < 50; ++seed) {
    RngStream r(100 + static_cast<std::uint64_t>(seed));
    const auto shards = partition_dirichlet(600, 6, 0.1, r, 1000);
    std::size_t lo = shards[0].size();
    std::size_t hi = lo;
    for (const auto& s : shards) {
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    skewed += static_cast<double>(hi) / static_cast<double>(lo) > 2.0;
  }
  CHECK(skewed >= 40);

  CHECK_THROWS_AS(partition_dirichlet(3, 5, 0.5, rng), ParameterError);
  CHECK_THROWS_AS(partition_dirichlet(30, 3, 0.0, rng), ParameterError);
}

TEST_CASE("strategy modes") {
  RngStream rng(2);
  StrategyConfig s;
  s.kind = StrategyKind::RoLoRA;
  CHECK(derive_mode(s, 1, 3, nullptr, rng) == ModeVector::uniform(3, 1));
  CHECK(derive_mode(s, 2, 3, nullptr, rng) == ModeVector::uniform(3, 0));
  s.kind = StrategyKind::FixedSchedule;
  s.pattern = "BBA";
  CHECK(derive_mode(s, 3, 2, nullptr, rng) == ModeVector::uniform(2, 0));
  CHECK(derive_mode(s, 4, 2, nullptr, rng) == ModeVector::uniform(2, 1));
  s.kind = StrategyKind::FFA_LoRA;
  for (int t = 1; t < 20; ++t) CHECK(derive_mode(s, t, 2, nullptr, rng) == ModeVector::uniform(2, 1));
  s.kind = StrategyKind::FedLoRA;
  CHECK(derive_mode(s, 7, 2, nullptr, rng).both);
  s.kind = StrategyKind::AS_LoRA;
  CHECK_THROWS_AS(derive_mode(s, 1, 2, nullptr, rng), ParameterError);
  CHECK_THROWS_AS(derive_mode(s, 0, 2, nullptr, rng), ParameterError);
}

TEST_CASE("local training") {
  GeneratedTask g = random_point(3, 2);
  ClientState c;
  c.shard = all_indices(g.task.num_samples());
  c.local = g.model;
  c.rng = RngStream(4);
  const scoring::ProjectionSet proj = scoring::make_projection_set(g.model, 9, false);

  LocalTrainOptions zero;
  zero.tau = 0;
  const LocalResult r0 = local_train(c, g.task, ModeVector::uniform(2, 1), zero, proj);
  for (std::size_t n = 0; n < 2; ++n) {
    CHECK(r0.model.layers[n].A == g.model.layers[n].A);
    CHECK(r0.model.layers[n].B == g.model.layers[n].B);
    const Matrix gB = grad_B(g.model.layers[n], g.task, static_cast<int>(n), c.shard);
    CHECK(r0.scores.sB[n] == doctest::Approx(gB.squaredNorm()).epsilon(1e-12));
  }

  // Reference loop: full-batch gradient descent on B only.
  LocalTrainOptions o;
  o.tau = 5;
  o.eta = 0.07;
  const LocalResult r = local_train(c, g.task, ModeVector::uniform(2, 1), o, proj);
  for (int n = 0; n < 2; ++n) {
    const auto i = static_cast<std::size_t>(n);
    LoraLayer ref = g.model.layers[i];
    for (int step = 0; step < 5; ++step) ref.B -= 0.07 * grad_B(ref, g.task, n, c.shard);
    CHECK(frobenius_norm(r.model.layers[i].B - ref.B) < 1e-12);
    CHECK(r.model.layers[i].A == g.model.layers[i].A);
  }

  // Under DP only the active factor moves as well.
  LocalTrainOptions dpo = o;
  dpo.dp.enabled = true;
  dpo.dp.sampling_rate = 0.3;
  const LocalResult rd = local_train(c, g.task, ModeVector::uniform(2, 0), dpo, proj);
  CHECK(rd.model.layers[0].B == g.model.layers[0].B);
  CHECK(rd.model.layers[0].A != g.model.layers[0].A);

  ClientState empty = c;
  empty.shard.clear();
  CHECK_THROWS_AS(local_train(empty, g.task, ModeVector::uniform(2, 1), o, proj), ParameterError);
  CHECK_THROWS_AS(local_train(c, g.task, ModeVector::uniform(3, 1), o, proj), ParameterError);
}

TEST_CASE("skipped steps still produce scores") {
  GeneratedTask g = random_point(5);
  ClientState c;
  c.shard = {0, 1, 2};
  c.local = g.model;
  c.rng = RngStream(6);
  LocalTrainOptions o;
  o.tau = 4;
  o.dp.enabled = true;
  o.dp.sampling_rate = 0.01;
  const LocalResult r = local_train(c, g.task, ModeVector::uniform(1, 1), o, scoring::make_projection_set(g.model, 1, false));
  CHECK(r.skipped_steps > 0);
  CHECK(r.scores.num_layers() == 1);
}

TEST_CASE("aggregation") {
  const std::vector<Matrix> B1{Matrix{{1.0}, {0.0}}};
  const std::vector<Matrix> A1{Matrix{{1.0, 0.0}}};
  CHECK(aggregation_error(B1, A1) == 0.0);
  const std::vector<Matrix> Bs{Matrix{{1.0}, {0.0}}, Matrix{{0.0}, {1.0}}};
  const std::vector<Matrix> As{Matrix{{1.0, 0.0}}, Matrix{{0.0, 1.0}}};
  CHECK(aggregation_error(Bs, As) == 0.5);
  // Shared A: exact.
  RngStream rng(7);
  const Matrix A = gaussian_matrix(3, 9, 1.0, rng);
  const std::vector<Matrix> shared{A, A, A};
  const std::vector<Matrix> many{gaussian_matrix(5, 3, 1.0, rng), gaussian_matrix(5, 3, 1.0, rng), gaussian_matrix(5, 3, 1.0, rng)};
  CHECK(aggregation_error(many, shared) < 1e-12);

  GeneratedTask g = random_point(8, 2);
  const ModelState& prev = g.model;
  ModelState c1 = prev;
  c1.layers[0].B *= 2.0;
  c1.layers[1].A *= 3.0;
  const std::vector<ModelState> single{c1};
  const std::vector<ModeVector> both{ModeVector::both_active(2)};
  const ModelState k1 = aggregate_components(prev, single, both);
  CHECK(k1.layers[0].B == c1.layers[0].B);
  CHECK(k1.layers[1].A == c1.layers[1].A);

  const std::vector<ModelState> same{c1, c1};
  const std::vector<ModeVector> b2{ModeVector::uniform(2, 1), ModeVector::uniform(2, 1)};
  const ModelState m = aggregate_components(prev, same, b2);
  CHECK(frobenius_norm(m.layers[0].B - c1.layers[0].B) < 1e-15);
  // Inactive A carries over from the previous global model, not from clients.
  CHECK(m.layers[1].A == prev.layers[1].A);
  CHECK_FALSE(m.trainable[0].a);
  CHECK(m.trainable[0].b);

  ModelState c2 = prev;
  c2.layers[0].B *= -1.0;
  const std::vector<ModelState> hetero{c1, c2};
  const ModelState mixed = aggregate_components(prev, hetero, b2);
  CHECK(frobenius_norm(mixed.layers[0].B - 0.5 * (c1.layers[0].B + c2.layers[0].B)) < 1e-14);

  const std::vector<ModelState> none;
  const std::vector<ModeVector> no_modes;
  CHECK_THROWS_AS(aggregate_components(prev, none, no_modes), ParameterError);
}

TEST_CASE("one client without dp is centralised training") {
  ExperimentConfig c = small_config();
  c.federation.K = 1;
  c.strategy.kind = StrategyKind::FixedSchedule;
  c.strategy.pattern = "B";
  Simulation sim(c);
  ModelState ref = sim.initial_model();
  const auto idx = all_indices(c.task.num_samples);
  sim.run_round();
  for (int n = 0; n < 2; ++n) {
    LoraLayer& l = ref.layers[static_cast<std::size_t>(n)];
    for (int s = 0; s < c.federation.tau; ++s) l.B -= c.federation.eta * grad_B(l, sim.task(), n, idx);
    CHECK(frobenius_norm(sim.server().global.layers[static_cast<std::size_t>(n)].B - l.B) < 1e-12);
    CHECK(sim.server().global.layers[static_cast<std::size_t>(n)].A == l.A);
  }
}

TEST_CASE("round invariants and scheduling order") {
  ExperimentConfig c = small_config();
  c.dp.enabled = true;
  c.dp.sampling_rate = 0.3;
  c.strategy.kind = StrategyKind::AS_LoRA;
  Simulation a(c);
  Simulation b(c);
  const std::vector<int> reversed{2, 1, 0};
  for (int t = 1; t <= c.federation.T; ++t) {
    const ModelState before = a.server().global;
    const analysis::MetricsRecord ra = a.run_round();
    const analysis::MetricsRecord rb = b.run_round(reversed);
    CHECK(ra.mode_bits == rb.mode_bits);
    CHECK(ra.loss == rb.loss);
    CHECK(ra.smoothed_a == rb.smoothed_a);
    for (int n = 0; n < 2; ++n) {
      const auto i = static_cast<std::size_t>(n);
      if (ra.mode_bits[i] == '1') CHECK(a.server().global.layers[i].A == before.layers[i].A);
      if (ra.mode_bits[i] == '0') CHECK(a.server().global.layers[i].B == before.layers[i].B);
      CHECK(ra.delta[i] >= 0.0);
      CHECK(ra.delta[i] <= frobenius_norm(a.task().Bstar[i] * a.task().Astar[i]) * (1 + 1e-12));
    }
    CHECK(ra.agg_error < 1e-12);
    CHECK(ra.epsilon == doctest::Approx(dp::epsilon_bound(0.3, 2.0, 1.0, t, 1e-5)));
  }
  CHECK_THROWS_AS(a.run_round(), Error);
  const std::vector<int> short_order{0};
  Simulation d(c);
  CHECK_THROWS_AS(d.run_round(short_order), ParameterError);
}

TEST_CASE("fedlora has aggregation error") {
  ExperimentConfig c = small_config();
  c.strategy.kind = StrategyKind::FedLoRA;
  c.federation.partition_alpha = 0.2;
  Simulation sim(c);
  sim.run_round();
  const analysis::MetricsRecord r = sim.run_round();
  CHECK(r.mode_bits == "**");
  CHECK(r.agg_error > 1e-8);
}

TEST_CASE("experiment variants run and stay deterministic") {
  ExperimentConfig c = small_config();
  c.federation.T = 0;
  const Trace empty = run_experiment(c);
  CHECK(empty.rounds.empty());
  CHECK(empty.initial.round == 0);

  c = small_config();
  c.selection.granularity = selection::Granularity::PerClient;
  c.federation.two_pass = true;
  c.federation.smoothing.method = dp::SmoothingMethod::Laplacian;
  c.strategy.estimator.kind = scoring::EstimatorKind::FD;
  c.strategy.estimator.fd_one_sided = true;
  const Trace t1 = run_experiment(c);
  REQUIRE(t1.rounds.size() == 6);
  CHECK(t1.rounds[0].mode_bits.find('|') != std::string::npos);
  c.federation.parallel_clients = true;
  const Trace t2 = run_experiment(c);
  for (std::size_t i = 0; i < t1.rounds.size(); ++i) {
    CHECK(t1.rounds[i].loss == t2.rounds[i].loss);
    CHECK(t1.rounds[i].mode_bits == t2.rounds[i].mode_bits);
  }

  for (dp::SmoothingMethod m : {dp::SmoothingMethod::Gaussian5Tap, dp::SmoothingMethod::Ema}) {
    ExperimentConfig s = small_config();
    s.federation.smoothing.method = m;
    s.selection.rule = selection::AggregationRule::MajorityVote;
    const Trace t = run_experiment(s);
    CHECK(std::isfinite(t.rounds.back().loss));
  }
}

TEST_CASE("ffa reaches its floor and as-lora goes below it") {
  ExperimentConfig c;
  c.seed = 21;
  c.task.num_layers = 1;
  c.task.d_in = 12;
  c.task.d_out = 12;
  c.task.rank = 2;
  c.task.alpha_scale = 2;
  c.task.num_samples = 60;
  c.task.whiten_inputs = true;
  c.federation.K = 1;
  c.federation.tau = 1;
  c.federation.T = 400;
  c.federation.eta = 0.05;
  c.strategy.projection = false;
  c.strategy.kind = StrategyKind::FFA_LoRA;
  const Trace ffa = run_experiment(c);
  Simulation probe(c);
  const double floor = analysis::ffa_floor_oracle(probe.task(), probe.initial_model().layers[0].A, 0).floor;
  CHECK(ffa.rounds.back().r_rec <= 2.0 * (2.0 * floor));
  CHECK(ffa.rounds.back().r_rec >= 0.5 * (2.0 * floor));

  c.strategy.kind = StrategyKind::AS_LoRA;
  c.selection.policy = selection::Policy::Argmax;
  c.strategy.estimator.kind = scoring::EstimatorKind::HVP;
  const Trace as = run_experiment(c);
  CHECK(as.rounds.back().delta[0] <= 1e-3 * as.initial.delta[0]);
}

}
