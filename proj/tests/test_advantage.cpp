#include <cmath>

#include "doctest.h"
#include "prime/advantage.hpp"
#include "prime/errors.hpp"
#include "prime/prm.hpp"
#include "prime/selftest.hpp"

using namespace prime;

namespace {

// One response per entry: outcome reward and per-token process rewards.
PromptGroup make_group(const std::vector<std::pair<double, std::vector<double>>>& spec) {
  PromptGroup g;
  g.instance = make_addchain({1, 1});
  for (const auto& [reward, tokens] : spec) {
    Trajectory t;
    t.response.assign(tokens.size(), task_vocab().id("2"));
    t.outcome.reward = reward;
    std::vector<double> zeros(tokens.size(), 0.0);
    // beta = 1 with zero reference reproduces the token rewards exactly.
    t.process = process_rewards_from_logprobs(tokens, zeros, 1.0);
    g.trajectories.push_back(t);
  }
  return g;
}

PromptGroup outcomes_only(const std::vector<double>& rewards) {
  std::vector<std::pair<double, std::vector<double>>> spec;
  for (double r : rewards) spec.push_back({r, {0.0}});
  return make_group(spec);
}

void check_close(const TokenAdvantages& got, const TokenAdvantages& want, double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    REQUIRE(got[i].size() == want[i].size());
    for (std::size_t t = 0; t < got[i].size(); ++t) CHECK(std::abs(got[i][t] - want[i][t]) < tol);
  }
}

AdvantageCfg outcome_cfg(Estimator e) {
  AdvantageCfg cfg;
  cfg.estimator = e;
  cfg.use_process_rewards = false;
  return cfg;
}

}  // namespace

TEST_CASE("leave-one-out outcome advantages") {
  const auto a = loo_outcome_advantages(outcomes_only({1, 0, 0, 1}));
  const std::vector<double> want = {2.0 / 3, -2.0 / 3, -2.0 / 3, 2.0 / 3};
  for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(want[i]).epsilon(1e-14));
  CHECK_THROWS_AS(loo_outcome_advantages(outcomes_only({1})), ContractViolation);
}

TEST_CASE("PRIME: leave-one-out process return plus leave-one-out outcome") {
  // y1 rewards [0.2, 0.4] (token mean 0.3), y2 reward [0.1] (token mean 0.1).
  const PromptGroup g = make_group({{1.0, {0.2, 0.4}}, {0.0, {0.1}}});
  AdvantageCfg cfg;
  // y1: centered by 0.1 -> [0.1, 0.3], returns [0.4, 0.3], outcome +1.
  // y2: centered by 0.3 -> [-0.2], outcome -1.
  check_close(prime_advantages(g, cfg), {{1.4, 1.3}, {-1.2}});
  cfg.use_outcome = false;
  check_close(prime_advantages(g, cfg), {{0.4, 0.3}, {-0.2}});
  cfg.baseline = ProcessBaseline::kSequenceTotal;  // y2 baseline becomes 0.6
  check_close(prime_advantages(g, cfg), {{0.4, 0.3}, {-0.5}});
  cfg.baseline = ProcessBaseline::kTokenMean;
  cfg.gamma = 0.5;
  check_close(prime_advantages(g, cfg), {{0.25, 0.3}, {-0.2}});
  cfg.use_outcome = true;
  cfg.use_process_rewards = false;
  check_close(prime_advantages(g, cfg), {{1.0, 1.0}, {-1.0}});
}

TEST_CASE("PRIME: token-mean baselines 0.4 and 0.15") {
  const PromptGroup g = make_group({{1.0, {0.1, 0.2}}, {0.0, {0.4}}});
  check_close(prime_advantages(g, AdvantageCfg{}), {{0.5, 0.8}, {-0.75}});
}

TEST_CASE("PRIME with zero process rewards is the broadcast LOO outcome") {
  const PromptGroup g = make_group({{1.0, {0.0, 0.0}}, {0.0, {0.0}}, {0.5, {0.0, 0.0, 0.0}}});
  const auto loo = loo_outcome_advantages(g);
  const auto a = prime_advantages(g, AdvantageCfg{});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (double v : a[i]) CHECK(v == loo[i]);
}

TEST_CASE("PRIME advantages need process rewards when enabled") {
  PromptGroup g = outcomes_only({1, 0});
  g.trajectories[0].process.reset();
  CHECK_THROWS_AS(prime_advantages(g, AdvantageCfg{}), ContractViolation);
  CHECK_NOTHROW(prime_advantages(g, outcome_cfg(Estimator::kRloo)));
}

TEST_CASE("GRPO normalizes by the population std") {
  check_close(grpo_advantages(outcomes_only({1, 0, 1, 0}), outcome_cfg(Estimator::kGrpo)),
              {{1}, {-1}, {1}, {-1}});
  // Constant rewards: the component is zero rather than NaN.
  check_close(grpo_advantages(outcomes_only({1, 1, 1}), outcome_cfg(Estimator::kGrpo)), {{0}, {0}, {0}});
  AdvantageCfg cfg;
  cfg.estimator = Estimator::kGrpo;
  check_close(grpo_advantages(make_group({{1, {0.5}}, {1, {0.5}}}), cfg), {{0}, {0}});
  // Process part: token means 0.3 and 0.1 give mean 0.2, std 0.1.
  cfg.use_outcome = false;
  check_close(grpo_advantages(make_group({{1.0, {0.2, 0.4}}, {0.0, {0.1}}}), cfg), {{2.0, 2.0}, {-1.0}},
              1e-9);
}

TEST_CASE("REINFORCE: outcome plus discounted process return, no baseline") {
  AdvantageCfg cfg;
  cfg.estimator = Estimator::kReinforce;
  check_close(reinforce_advantages(make_group({{0.0, {0.1, 0.2}}}), cfg), {{0.3, 0.2}});
  check_close(reinforce_advantages(make_group({{1.0, {0.1, 0.2}}}), cfg), {{1.3, 1.2}});
  cfg.gamma = 0.5;
  check_close(reinforce_advantages(make_group({{0.0, {0.1, 0.2}}}), cfg), {{0.2, 0.2}});
}

TEST_CASE("GAE on a two-token response") {
  const std::vector<double> r = {0.0, 1.0}, v = {0.5, 0.8, 123.0};
  // delta_1 = 1 - 0.8 = 0.2, delta_0 = 0 + 0.8 - 0.5 = 0.3
  auto a = gae_from_values(r, v, 1.0, 1.0);
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(0.2));
  a = gae_from_values(r, v, 1.0, 0.0);
  CHECK(a[0] == doctest::Approx(0.3));
  CHECK(a[1] == doctest::Approx(0.2));
  a = gae_from_values(r, v, 0.5, 1.0);
  CHECK(std::abs(a[0]) < 1e-15);
  CHECK(a[1] == doctest::Approx(0.2));
  // The value after the terminal token is ignored.
  CHECK(gae_from_values(r, std::vector<double>{0.5, 0.8, -9.0}, 1.0, 1.0) == gae_from_values(r, v, 1.0, 1.0));
  CHECK_THROWS_AS(gae_from_values(r, std::vector<double>{0.0, 0.0}, 1.0, 1.0), ContractViolation);
}

TEST_CASE("GAE with lambda = 1 and zero values is the Monte-Carlo return") {
  const std::vector<double> r = {0.1, -0.2, 0.7}, v(4, 0.0);
  const auto a = gae_from_values(r, v, 1.0, 1.0);
  CHECK(a[0] == doctest::Approx(0.6));
  CHECK(a[1] == doctest::Approx(0.5));
  CHECK(a[2] == doctest::Approx(0.7));
}

TEST_CASE("critic rewards place the outcome on the last token") {
  const PromptGroup g = make_group({{1.0, {0.1, 0.2}}});
  AdvantageCfg cfg;
  const auto r = critic_rewards(g.trajectories[0], cfg);
  CHECK(r[0] == doctest::Approx(0.1));
  CHECK(r[1] == doctest::Approx(1.2));
  cfg.use_process_rewards = false;
  CHECK(critic_rewards(g.trajectories[0], cfg) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("PRM-as-value: outcome minus the implicit value of each prefix") {
  check_close(prm_value_advantages(make_group({{1.0, {0.1, 0.2}}})), {{1.0, 0.9}});
  AdvantageCfg cfg;
  cfg.estimator = Estimator::kPrmValue;
  cfg.use_process_rewards = false;
  CHECK(cfg.needs_process_rewards());
}

TEST_CASE("compute_advantages dispatches and PPO requires a value model") {
  const PromptGroup g = make_group({{1.0, {0.2, 0.4}}, {0.0, {0.1}}});
  AdvantageCfg cfg;
  check_close(compute_advantages(g, cfg, nullptr), prime_advantages(g, cfg));
  cfg.estimator = Estimator::kPpo;
  CHECK_THROWS_AS(compute_advantages(g, cfg, nullptr), ContractViolation);
  const ValueParams zero = zero_value_params(Dims{}, task_vocab().size());
  // Zero values: GAE(1, 1) is the return of process rewards plus the outcome.
  check_close(compute_advantages(g, cfg, &zero), {{1.6, 1.4}, {0.1}});
}

TEST_CASE("advantage settings parse and validate") {
  CHECK(parse_estimator("prm_value") == Estimator::kPrmValue);
  CHECK_THROWS_AS(parse_estimator("a2c"), ConfigError);
  CHECK(parse_process_baseline(to_string(ProcessBaseline::kSequenceTotal)) == ProcessBaseline::kSequenceTotal);
  AdvantageCfg cfg;
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("filter keeps lo <= accuracy <= hi") {
  std::vector<PromptGroup> gs;
  for (int correct = 0; correct <= 4; ++correct) {
    std::vector<double> r(4, 0.0);
    for (int i = 0; i < correct; ++i) r[i] = 1.0;
    gs.push_back(outcomes_only(r));
  }
  const FilterResult res = filter_prompts(gs, 0.2, 0.8);
  CHECK(res.kept.size() == 3);
  CHECK(res.filtered_fraction == doctest::Approx(0.4));
  for (const PromptGroup& g : res.kept) CHECK(g.kept);
  // Bounds are inclusive.
  CHECK(filter_prompts(gs, 0.25, 0.75).kept.size() == 3);
  CHECK(filter_prompts(gs, 0.0, 1.0).kept.size() == 5);
  CHECK(filter_prompts({}, 0.2, 0.8).filtered_fraction == 0.0);
  CHECK_THROWS_AS(filter_prompts(gs, 0.8, 0.2), ContractViolation);
}

TEST_CASE("filtering binarizes fractional rewards at 0.5") {
  const PromptGroup g = outcomes_only({0.5, 0.49, 0.75, 0.0});
  CHECK(g.accuracy() == 0.5);
  CHECK(filter_prompts({g}, 0.6, 1.0).kept.empty());
}

TEST_CASE("filtering is idempotent") {
  Rng rng(21);
  std::vector<PromptGroup> gs;
  for (int i = 0; i < 100; ++i) gs.push_back(random_group(rng, 6, 4));
  for (PromptGroup& g : gs)
    for (Trajectory& t : g.trajectories) t.outcome.reward = t.outcome.reward > 0 ? 1.0 : 0.0;
  const FilterResult once = filter_prompts(gs, 0.2, 0.8);
  const FilterResult twice = filter_prompts(once.kept, 0.2, 0.8);
  CHECK(twice.kept.size() == once.kept.size());
  CHECK(twice.filtered_fraction == 0.0);
}

TEST_CASE("leave-one-out advantages sum to zero per group") {
  Rng rng(22);
  AdvantageCfg cfg;
  cfg.use_process_rewards = false;
  for (int i = 0; i < 200; ++i) {
    const PromptGroup g = random_group(rng, 8, 5);
    double s = 0.0;
    for (double a : loo_outcome_advantages(g)) s += a;
    CHECK(std::abs(s) < 1e-12);
  }
}

TEST_CASE("every estimator agrees with its independent oracle") {
  for (const CheckResult& r : run_oracle_suite(300, 5)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("the oracle comparison catches a sign-flipped process term") {
  CHECK(prime_oracle_error(100, 3) < 1e-10);
  fault::set_flip_process_sign(true);
  const double broken = prime_oracle_error(100, 3);
  fault::set_flip_process_sign(false);
  CHECK(broken > 1e-3);
  CHECK(prime_oracle_error(100, 3) < 1e-10);
}

TEST_CASE("the invariant suite passes") {
  for (const CheckResult& r : run_invariant_suite(13)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}
