#include <doctest.h>

#include <cmath>

#include "aslora/selection.hpp"

using namespace aslora;
using namespace aslora::selection;

namespace {

scoring::LayerScores scores(std::vector<double> a, std::vector<double> b) { return {std::move(a), std::move(b)}; }

}  // namespace

TEST_SUITE("selection") {

TEST_CASE("ema update") {
  CHECK(ema_update(5.0, 5.0, 0.8) == 5.0);
  CHECK(ema_update(0.0, 10.0, 0.8) == doctest::Approx(2.0).epsilon(1e-15));
  // Error to a constant input shrinks by exactly beta each step.
  double v = 0.0;
  double err = 3.0;
  for (int i = 0; i < 20; ++i) {
    v = ema_update(v, 3.0, 0.8);
    CHECK(std::abs(3.0 - v) == doctest::Approx(err * 0.8).epsilon(1e-12));
    err *= 0.8;
  }

  SelectionState st(SelectionConfig{}, 1);
  st.update(scores({4.0}, {1.0}));
  CHECK(st.smoothed_a[0] == 4.0);  // first update copies
  st.update(scores({9.0}, {1.0}));
  CHECK(st.smoothed_a[0] == doctest::Approx(0.8 * 4.0 + 0.2 * 9.0));
  CHECK_THROWS_AS(st.update(scores({1.0, 2.0}, {1.0, 2.0})), ParameterError);
}

TEST_CASE("temperature") {
  CHECK(temperature(10, 2.0, 0.2, 0.95, 10) == 2.0);
  CHECK(temperature(11, 2.0, 0.2, 0.95, 10) == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(temperature(1000, 2.0, 0.2, 0.95, 10) == 0.2);
  for (int t = 1; t < 200; ++t) CHECK(temperature(t + 1, 2.0, 0.2, 0.95, 10) <= temperature(t, 2.0, 0.2, 0.95, 10));
}

TEST_CASE("select probability") {
  CHECK(select_probability(3.0, 3.0, 0.7) == 0.5);
  CHECK(select_probability(1.0, 0.0, 0.2) == doctest::Approx(1.0 / (1.0 + std::exp(-5.0))).epsilon(1e-14));
  CHECK(select_probability(1.0, 0.0, 0.2) == doctest::Approx(0.99331).epsilon(1e-5));
  CHECK(select_probability(101.0, 100.0, 0.2) == doctest::Approx(select_probability(1.0, 0.0, 0.2)).epsilon(1e-12));
  CHECK(select_probability(1e4, -1e4, 1e-3) == 1.0);
  CHECK(select_probability(-1e4, 1e4, 1e-3) == 0.0);
  CHECK_THROWS_AS(select_probability(1.0, 0.0, 0.0), ParameterError);
}

TEST_CASE("mode selection") {
  SelectionConfig cfg;
  cfg.warmup_rounds = 10;
  SelectionState st(cfg, 4);
  st.update(scores({1, 2, 3, 4}, {4, 3, 2, 1}));
  RngStream rng(1);
  CHECK(select_modes(st, 1, rng) == ModeVector::uniform(4, 1));
  CHECK(select_modes(st, 2, rng) == ModeVector::uniform(4, 0));

  SelectionConfig greedy;
  greedy.warmup_rounds = 2;
  greedy.policy = Policy::Argmax;
  SelectionState g(greedy, 2);
  g.update(scores({5.0, 2.0}, {2.0, 2.0}));
  const ModeVector m3 = select_modes(g, 3, rng);
  CHECK(m3.bits[0] == 0);
  CHECK(m3.bits[1] == 0);  // tie goes to A
  CHECK(m3.to_string() == "00");

  // Global granularity averages over layers then broadcasts one bit.
  SelectionConfig glob = greedy;
  glob.granularity = Granularity::Global;
  SelectionState gl(glob, 3);
  gl.update(scores({0.0, 0.0, 9.0}, {1.0, 1.0, 1.0}));
  CHECK(select_modes(gl, 3, rng) == ModeVector::uniform(3, 0));

  // Softmax sampling matches P(A) empirically.
  SelectionConfig soft;
  soft.warmup_rounds = 0;
  soft.T0 = 1.0;
  soft.T_min = 1.0;
  SelectionState s(soft, 1);
  s.update(scores({1.0}, {0.0}));
  int a = 0;
  for (int i = 0; i < 20000; ++i) a += select_modes(s, 5, rng).bits[0] == 0;
  CHECK(a / 20000.0 == doctest::Approx(select_probability(1.0, 0.0, 1.0)).epsilon(0.02));
}

TEST_CASE("mode vector") {
  const ModeVector both = ModeVector::both_active(3);
  CHECK(both.trains_a(1));
  CHECK(both.trains_b(1));
  CHECK(both.to_string() == "***");
  const ModeVector b = ModeVector::uniform(2, 1);
  CHECK_FALSE(b.trains_a(0));
  CHECK(b.trains_b(0));
}

TEST_CASE("client score aggregation") {
  const std::vector<scoring::LayerScores> one{scores({1.5, -2.0}, {0.5, 3.0})};
  const std::vector<double> w1{7.0};
  for (AggregationRule r : {AggregationRule::UniformAvg, AggregationRule::WeightedAvg}) {
    const auto out = aggregate_client_scores(one, w1, r);
    CHECK(out.sA == one[0].sA);
    CHECK(out.sB == one[0].sB);
  }
  // With a single client the vote only preserves the preferred factor.
  const auto vote1 = aggregate_client_scores(one, w1, AggregationRule::MajorityVote);
  CHECK(vote1.sA == std::vector<double>{1.0, 0.0});
  CHECK(vote1.sB == std::vector<double>{0.0, 1.0});

  const std::vector<scoring::LayerScores> two{scores({1.0}, {0.0}), scores({3.0}, {0.0})};
  const std::vector<double> sizes{100.0, 300.0};
  CHECK(aggregate_client_scores(two, sizes, AggregationRule::UniformAvg).sA[0] == 2.0);
  CHECK(aggregate_client_scores(two, sizes, AggregationRule::WeightedAvg).sA[0] == doctest::Approx(2.5).epsilon(1e-15));

  const std::vector<scoring::LayerScores> three{scores({1.0}, {2.0}), scores({1.0}, {2.0}), scores({5.0}, {0.0})};
  const std::vector<double> w3{1, 1, 1};
  const auto votes = aggregate_client_scores(three, w3, AggregationRule::MajorityVote);
  CHECK(votes.sA[0] == 1.0);
  CHECK(votes.sB[0] == 2.0);

  const std::vector<scoring::LayerScores> tie{scores({1.0}, {2.0}), scores({2.0}, {1.0})};
  const std::vector<double> w2{1, 1};
  SelectionConfig c;
  c.warmup_rounds = 0;
  c.policy = Policy::Argmax;
  SelectionState st(c, 1);
  st.update(aggregate_client_scores(tie, w2, AggregationRule::MajorityVote));
  RngStream rng(3);
  CHECK(select_modes(st, 1, rng).bits[0] == 0);

  const std::vector<scoring::LayerScores> none;
  CHECK_THROWS_AS(aggregate_client_scores(none, w1, AggregationRule::UniformAvg), ParameterError);
  CHECK_THROWS_AS(aggregate_client_scores(two, w1, AggregationRule::WeightedAvg), ParameterError);
}

TEST_CASE("selection config validation") {
  SelectionConfig c;
  CHECK_NOTHROW(c.validate());
  c.T_min = 3.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = SelectionConfig{};
  c.gamma = 1.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = SelectionConfig{};
  c.ema_coef = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
}

}
