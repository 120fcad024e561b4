#include "aslora/federation.hpp"

#include <chrono>
#include <numeric>
#include <thread>

namespace aslora::federation {

std::vector<std::vector<int>> partition_dirichlet(int n_samples, int K, double alpha, RngStream& rng, int max_retries) {
  if (K < 1) throw ParameterError("partition_dirichlet: K must be >= 1");
  if (!(alpha > 0.0)) throw ParameterError("partition_dirichlet: alpha must be > 0");
  if (n_samples < K) throw ParameterError("partition_dirichlet: fewer samples than clients");
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::vector<std::vector<int>> shards(static_cast<std::size_t>(K));
    const std::vector<double> p = sample_dirichlet(alpha, K, rng);
    for (int i = 0; i < n_samples; ++i) {
      const double u = rng.uniform();
      double acc = 0.0;
      int k = K - 1;
      for (int c = 0; c < K; ++c) {
        acc += p[static_cast<std::size_t>(c)];
        if (u < acc) {
          k = c;
          break;
        }
      }
      shards[static_cast<std::size_t>(k)].push_back(i);
    }
    bool any_empty = false;
    for (const auto& s : shards) any_empty = any_empty || s.empty();
    if (!any_empty) return shards;
  }
  throw Error("partition_dirichlet: empty shard after " + std::to_string(max_retries) + " retries (alpha=" +
              std::to_string(alpha) + ", K=" + std::to_string(K) + ")");
}

ModeVector derive_mode(const StrategyConfig& strategy, int t, int num_layers, const selection::SelectionState* state,
                       RngStream& rng) {
  if (t < 1) throw ParameterError("derive_mode: round must be >= 1");
  switch (strategy.kind) {
    case StrategyKind::FedLoRA:
      return ModeVector::both_active(num_layers);
    case StrategyKind::FFA_LoRA:
      return ModeVector::uniform(num_layers, 1);
    case StrategyKind::RoLoRA:
      // Odd rounds freeze A.
      return ModeVector::uniform(num_layers, t % 2 == 1 ? 1 : 0);
    case StrategyKind::FixedSchedule: {
      if (strategy.pattern.empty()) throw ParameterError("derive_mode: empty schedule pattern");
      const char letter = strategy.pattern[static_cast<std::size_t>(t - 1) % strategy.pattern.size()];
      return ModeVector::uniform(num_layers, letter == 'A' ? 0 : 1);
    }
    case StrategyKind::AS_LoRA:
      if (state == nullptr) throw ParameterError("derive_mode: AS_LoRA requires a selection state");
      return selection::select_modes(*state, t, rng);
    case StrategyKind::UniformRandom: {
      ModeVector mv = ModeVector::uniform(num_layers, 0);
      for (auto& b : mv.bits) b = rng.bernoulli(0.5) ? 1 : 0;
      return mv;
    }
  }
  throw ParameterError("derive_mode: unknown strategy");
}

namespace {

std::vector<int> draw_batch(const ClientState& client, const dp::DpConfig& dp, RngStream& rng) {
  if (!dp.enabled) return client.shard;
  std::vector<int> picked = dp::poisson_subsample(static_cast<int>(client.shard.size()), dp.sampling_rate, rng);
  for (int& i : picked) i = client.shard[static_cast<std::size_t>(i)];
  return picked;
}

struct StepGrads {
  std::vector<LayerGrads> update;  // what the optimiser applies (noised under DP)
  std::vector<LayerGrads> raw;     // clean batch mean
};

// Gradients of every layer on one batch. Under DP, noise is drawn for a factor
// only when `needs(n, component)` holds, in layer order, A before B.
template <typename Needs>
StepGrads step_gradients(const ModelState& model, const SyntheticTask& task, std::span<const int> batch,
                         const dp::DpConfig& dp, RngStream& rng, Needs needs) {
  StepGrads out;
  for (int n = 0; n < model.num_layers(); ++n) {
    const LoraLayer& layer = model.layers[static_cast<std::size_t>(n)];
    if (!dp.enabled) {
      LayerGrads g = layer_grads(layer, task, n, batch);
      out.update.push_back(g);
      out.raw.push_back(std::move(g));
      continue;
    }
    const std::vector<LayerGrads> per = per_sample_grads(layer, task, n, batch);
    std::vector<Matrix> ga;
    std::vector<Matrix> gb;
    ga.reserve(per.size());
    gb.reserve(per.size());
    LayerGrads raw{Matrix::Zero(layer.A.rows(), layer.A.cols()), Matrix::Zero(layer.B.rows(), layer.B.cols())};
    for (const auto& p : per) {
      ga.push_back(p.gA);
      gb.push_back(p.gB);
      raw.gA += p.gA;
      raw.gB += p.gB;
    }
    raw.gA /= static_cast<double>(per.size());
    raw.gB /= static_cast<double>(per.size());
    LayerGrads noisy{Matrix::Zero(layer.A.rows(), layer.A.cols()), Matrix::Zero(layer.B.rows(), layer.B.cols())};
    // Each factor is clipped against its own budget C.
    if (needs(n, Component::A)) noisy.gA = dp::noisy_aggregate(ga, dp.clip_norm, dp.noise_multiplier, rng);
    if (needs(n, Component::B)) noisy.gB = dp::noisy_aggregate(gb, dp.clip_norm, dp.noise_multiplier, rng);
    out.update.push_back(std::move(noisy));
    out.raw.push_back(std::move(raw));
  }
  return out;
}

}  // namespace

LocalResult local_train(const ClientState& client, const SyntheticTask& task, const ModeVector& mode,
                        const LocalTrainOptions& o, const scoring::ProjectionSet& proj) {
  if (mode.size() != client.local.num_layers()) throw ParameterError("local_train: mode length mismatch");
  if (client.shard.empty()) throw ParameterError("local_train: client has an empty shard");
  LocalResult result;
  result.model = client.local;
  for (int n = 0; n < result.model.num_layers(); ++n) {
    result.model.trainable[static_cast<std::size_t>(n)] = {mode.trains_a(n), mode.trains_b(n)};
  }
  RngStream rng = client.rng;
  bool scored = false;
  const bool noised_scores = o.dp.enabled && o.scores_from_noised;

  for (int step = 0; step < o.tau; ++step) {
    const std::vector<int> batch = draw_batch(client, o.dp, rng);
    if (batch.empty()) {
      ++result.skipped_steps;
      continue;
    }
    const bool final_step = step == o.tau - 1;
    const StepGrads g = step_gradients(result.model, task, batch, o.dp, rng, [&](int n, Component c) {
      if (final_step && noised_scores) return true;
      return c == Component::A ? mode.trains_a(n) : mode.trains_b(n);
    });
    if (final_step) {
      result.scores = scoring::compute_scores(result.model, task, batch, noised_scores ? g.update : g.raw, o.estimator,
                                              proj, o.round);
      scored = true;
    }
    for (int n = 0; n < result.model.num_layers(); ++n) {
      const auto i = static_cast<std::size_t>(n);
      LoraLayer& layer = result.model.layers[i];
      if (mode.trains_a(n)) layer.A -= o.eta * g.update[i].gA;
      if (mode.trains_b(n)) layer.B -= o.eta * g.update[i].gB;
    }
  }

  if (!scored) {
    std::vector<int> batch = draw_batch(client, o.dp, rng);
    if (batch.empty()) batch = client.shard;
    const StepGrads g = step_gradients(result.model, task, batch, o.dp, rng, [&](int, Component) { return noised_scores; });
    result.scores =
        scoring::compute_scores(result.model, task, batch, noised_scores ? g.update : g.raw, o.estimator, proj, o.round);
  }
  return result;
}

double aggregation_error(std::span<const Matrix> Bs, std::span<const Matrix> As) {
  if (Bs.empty() || Bs.size() != As.size()) throw ParameterError("aggregation_error: need K >= 1 matching factor pairs");
  const double k = static_cast<double>(Bs.size());
  Matrix mean_product = Matrix::Zero(Bs.front().rows(), As.front().cols());
  Matrix mean_b = Matrix::Zero(Bs.front().rows(), Bs.front().cols());
  Matrix mean_a = Matrix::Zero(As.front().rows(), As.front().cols());
  for (std::size_t i = 0; i < Bs.size(); ++i) {
    mean_product += Bs[i] * As[i];
    mean_b += Bs[i];
    mean_a += As[i];
  }
  mean_product /= k;
  mean_b /= k;
  mean_a /= k;
  return frobenius_norm(mean_product - mean_b * mean_a);
}

ModelState aggregate_components(const ModelState& previous, std::span<const ModelState> clients,
                                std::span<const ModeVector> client_modes) {
  if (clients.empty()) throw ParameterError("aggregate_components: no client results");
  if (client_modes.size() != clients.size()) throw ParameterError("aggregate_components: missing client mode");
  ModelState out = previous;
  const double k = static_cast<double>(clients.size());
  for (int n = 0; n < previous.num_layers(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    bool any_a = false;
    bool any_b = false;
    for (const auto& m : client_modes) {
      any_a = any_a || m.trains_a(n);
      any_b = any_b || m.trains_b(n);
    }
    if (any_a) {
      Matrix sum = Matrix::Zero(previous.layers[i].A.rows(), previous.layers[i].A.cols());
      for (const auto& c : clients) sum += c.layers[i].A;
      out.layers[i].A = sum / k;
    }
    if (any_b) {
      Matrix sum = Matrix::Zero(previous.layers[i].B.rows(), previous.layers[i].B.cols());
      for (const auto& c : clients) sum += c.layers[i].B;
      out.layers[i].B = sum / k;
    }
    out.trainable[i] = {any_a, any_b};
  }
  return out;
}

Simulation::Simulation(const ExperimentConfig& config) : Simulation(config, [&] {
  config.validate();
  RngStream task_rng = RngStream(config.seed).derive("task");
  return make_synthetic_task(config.task, task_rng);
}()) {}

Simulation::Simulation(const ExperimentConfig& config, GeneratedTask generated)
    : config_(config),
      task_(std::move(generated.task)),
      initial_(generated.model),
      server_{generated.model, selection::SelectionState{}, {}, dp::PrivacyLedger(config.dp), {}, config.strategy, 0, {}, {}},
      master_(config.seed) {
  config_.validate();
  const int n_layers = initial_.num_layers();
  selection::SelectionConfig sel = config_.selection;
  sel.warmup_rounds = config_.resolved_warmup();
  server_.selection = selection::SelectionState(sel, n_layers);
  server_.projection = scoring::make_projection_set(initial_, master_.derive("projection").seed(), config_.strategy.projection);
  server_.smoothing_a.assign(static_cast<std::size_t>(n_layers), std::nullopt);
  server_.smoothing_b.assign(static_cast<std::size_t>(n_layers), std::nullopt);

  RngStream part_rng = master_.derive("partition");
  const auto shards = partition_dirichlet(task_.num_samples(), config_.federation.K, config_.federation.partition_alpha, part_rng);
  for (int k = 0; k < config_.federation.K; ++k) {
    ClientState c;
    c.id = k;
    c.shard = shards[static_cast<std::size_t>(k)];
    c.local = initial_;
    clients_.push_back(std::move(c));
    shard_weights_.push_back(static_cast<double>(shards[static_cast<std::size_t>(k)].size()));
    if (sel.granularity == selection::Granularity::PerClient) server_.client_selection.emplace_back(sel, n_layers);
  }
}

std::vector<scoring::LayerScores> Simulation::score_at_global(int t) const {
  std::vector<scoring::LayerScores> out;
  LocalTrainOptions o;
  o.tau = 0;
  o.eta = config_.federation.eta;
  o.dp = config_.dp;
  o.estimator = config_.strategy.estimator;
  o.scores_from_noised = config_.strategy.scores_from_noised;
  o.round = t;
  const ModeVector none = ModeVector::uniform(server_.global.num_layers(), 0);
  for (const auto& client : clients_) {
    ClientState probe = client;
    probe.local = server_.global;
    probe.rng = master_.derive("score-pass").derive(static_cast<std::uint64_t>(client.id)).derive(static_cast<std::uint64_t>(t));
    out.push_back(local_train(probe, task_, none, o, server_.projection).scores);
  }
  return out;
}

std::vector<LocalResult> Simulation::train_clients(const std::vector<ModeVector>& modes, int t,
                                                   std::span<const int> execution_order) const {
  const int K = static_cast<int>(clients_.size());
  std::vector<int> order(execution_order.begin(), execution_order.end());
  if (order.empty()) {
    order.resize(static_cast<std::size_t>(K));
    std::iota(order.begin(), order.end(), 0);
  }
  if (static_cast<int>(order.size()) != K) throw ParameterError("run_round: execution order must list every client");

  LocalTrainOptions o;
  o.tau = config_.federation.tau;
  o.eta = config_.federation.eta;
  o.dp = config_.dp;
  o.estimator = config_.strategy.estimator;
  o.scores_from_noised = config_.strategy.scores_from_noised;
  o.round = t;

  std::vector<LocalResult> results(static_cast<std::size_t>(K));
  auto work = [&](int k) {
    const auto i = static_cast<std::size_t>(k);
    ClientState c = clients_[i];
    c.local = server_.global;
    c.rng = master_.derive("client").derive(static_cast<std::uint64_t>(k)).derive(static_cast<std::uint64_t>(t));
    results[i] = local_train(c, task_, modes[i], o, server_.projection);
  };
  if (config_.federation.parallel_clients && K > 1) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(K));
    std::vector<std::thread> threads;
    threads.reserve(order.size());
    for (int k : order) {
      threads.emplace_back([&, k] {
        try {
          work(k);
        } catch (...) {
          errors[static_cast<std::size_t>(k)] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (int k : order) work(k);
  }
  return results;
}

namespace {

analysis::MetricsRecord base_record(int t, const ModelState& global, const SyntheticTask& task, const ServerState& server) {
  analysis::MetricsRecord r;
  r.round = t;
  r.loss = global_loss(global, task);
  r.r_rec = analysis::reconstruction_risk(global, task);
  for (int n = 0; n < global.num_layers(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    r.delta.push_back(analysis::subspace_misalignment(task.Bstar[i], task.Astar[i], global.layers[i].A));
  }
  r.epsilon = server.ledger.epsilon();
  r.smoothed_a = server.selection.smoothed_a;
  r.smoothed_b = server.selection.smoothed_b;
  return r;
}

}  // namespace

analysis::MetricsRecord Simulation::snapshot() const {
  analysis::MetricsRecord r = base_record(server_.round, server_.global, task_, server_);
  const int n_layers = server_.global.num_layers();
  r.raw_a.assign(static_cast<std::size_t>(n_layers), 0.0);
  r.raw_b.assign(static_cast<std::size_t>(n_layers), 0.0);
  for (int n = 0; n < n_layers; ++n) {
    const LoraLayer& layer = server_.global.layers[static_cast<std::size_t>(n)];
    r.lambda_a.push_back(analysis::rayleigh_quotient(layer, task_, n, Component::A));
    r.lambda_b.push_back(analysis::rayleigh_quotient(layer, task_, n, Component::B));
  }
  return r;
}

analysis::MetricsRecord Simulation::run_round(std::span<const int> execution_order) {
  const auto start = std::chrono::steady_clock::now();
  const int t = server_.round + 1;
  if (t > config_.federation.T) throw Error("run_round: all configured rounds already executed");
  const int n_layers = server_.global.num_layers();
  const int K = static_cast<int>(clients_.size());
  const selection::SelectionConfig& sel = server_.selection.config;
  const bool per_client = config_.strategy.kind == StrategyKind::AS_LoRA && sel.granularity == selection::Granularity::PerClient;

  std::vector<double> lambda_a;
  std::vector<double> lambda_b;
  for (int n = 0; n < n_layers; ++n) {
    const LoraLayer& layer = server_.global.layers[static_cast<std::size_t>(n)];
    lambda_a.push_back(analysis::rayleigh_quotient(layer, task_, n, Component::A));
    lambda_b.push_back(analysis::rayleigh_quotient(layer, task_, n, Component::B));
  }

  scoring::LayerScores aggregated;
  if (config_.federation.two_pass) {
    const auto fresh = score_at_global(t);
    aggregated = selection::aggregate_client_scores(fresh, shard_weights_, sel.rule);
    server_.selection.update(aggregated);
    if (per_client) {
      for (int k = 0; k < K; ++k) server_.client_selection[static_cast<std::size_t>(k)].update(fresh[static_cast<std::size_t>(k)]);
    }
  }

  RngStream sel_rng = master_.derive("selection").derive(static_cast<std::uint64_t>(t));
  std::vector<ModeVector> modes;
  std::string mode_bits;
  if (per_client) {
    for (int k = 0; k < K; ++k) {
      RngStream client_sel = sel_rng.derive(static_cast<std::uint64_t>(k));
      modes.push_back(selection::select_modes(server_.client_selection[static_cast<std::size_t>(k)], t, client_sel));
      mode_bits += (k ? "|" : "") + modes.back().to_string();
    }
  } else {
    const ModeVector mv = derive_mode(config_.strategy, t, n_layers, &server_.selection, sel_rng);
    modes.assign(static_cast<std::size_t>(K), mv);
    mode_bits = mv.to_string();
  }

  const std::vector<LocalResult> results = train_clients(modes, t, execution_order);

  std::vector<ModelState> client_models;
  client_models.reserve(results.size());
  for (const auto& r : results) client_models.push_back(r.model);
  ModelState next = aggregate_components(server_.global, client_models, modes);

  if (config_.federation.smoothing.method != dp::SmoothingMethod::None) {
    for (int n = 0; n < n_layers; ++n) {
      const auto i = static_cast<std::size_t>(n);
      const LoraLayer& prev = server_.global.layers[i];
      LoraLayer& layer = next.layers[i];
      if (next.trainable[i].a) {
        layer.A = prev.A + dp::smooth_gradient(layer.A - prev.A, config_.federation.smoothing, &server_.smoothing_a[i]);
      }
      if (next.trainable[i].b) {
        layer.B = prev.B + dp::smooth_gradient(layer.B - prev.B, config_.federation.smoothing, &server_.smoothing_b[i]);
      }
    }
  }

  double agg_error = 0.0;
  for (int n = 0; n < n_layers; ++n) {
    std::vector<Matrix> Bs;
    std::vector<Matrix> As;
    for (const auto& m : client_models) {
      Bs.push_back(m.layers[static_cast<std::size_t>(n)].B);
      As.push_back(m.layers[static_cast<std::size_t>(n)].A);
    }
    agg_error += aggregation_error(Bs, As);
  }
  agg_error /= n_layers;

  if (!config_.federation.two_pass) {
    std::vector<scoring::LayerScores> per;
    per.reserve(results.size());
    for (const auto& r : results) per.push_back(r.scores);
    aggregated = selection::aggregate_client_scores(per, shard_weights_, sel.rule);
    server_.selection.update(aggregated);
    if (per_client) {
      for (int k = 0; k < K; ++k) server_.client_selection[static_cast<std::size_t>(k)].update(per[static_cast<std::size_t>(k)]);
    }
  }

  server_.global = std::move(next);
  server_.ledger.advance();
  server_.round = t;

  analysis::MetricsRecord rec = base_record(t, server_.global, task_, server_);
  rec.agg_error = agg_error;
  rec.mode_bits = mode_bits;
  rec.raw_a = aggregated.sA;
  rec.raw_b = aggregated.sB;
  rec.lambda_a = std::move(lambda_a);
  rec.lambda_b = std::move(lambda_b);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

Trace run_experiment(const ExperimentConfig& config) {
  Simulation sim(config);
  Trace trace;
  trace.initial = sim.snapshot();
  for (int t = 1; t <= config.federation.T; ++t) trace.rounds.push_back(sim.run_round());
  trace.final_epsilon = config.dp.enabled
                            ? dp::epsilon_bound(config.dp.sampling_rate, config.dp.clip_norm, config.dp.noise_multiplier,
                                                config.federation.T, config.dp.delta)
                            : 0.0;
  return trace;
}

}  // namespace aslora::federation
