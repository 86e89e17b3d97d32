#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "prime/errors.hpp"
#include "prime/prm.hpp"

using namespace prime;

namespace {

ModelParams small_model(std::uint64_t seed) {
  ModelParams p = init_params(seed, Dims{4, 4, 8}, task_vocab().size());
  Rng rng(seed + 1);
  for (Tensor* t : p.tensors())
    for (double& v : t->data()) v = rng.uniform(-0.5, 0.5);
  return p;
}

Trajectory traj(const ModelParams& policy, const PromptInstance& inst, const std::string& text,
                double reward) {
  Trajectory t;
  t.response = task_vocab().encode(text);
  t.response.push_back(kEos);
  t.old_logprobs = sequence_logprobs(policy, inst.prompt, t.response);
  t.outcome.reward = reward;
  return t;
}

PromptGroup group(const ModelParams& policy) {
  PromptGroup g;
  g.instance = make_addchain({3, 4});
  g.trajectories.push_back(traj(policy, g.instance, "7", 1.0));
  g.trajectories.push_back(traj(policy, g.instance, "8", 0.0));
  g.trajectories.push_back(traj(policy, g.instance, "1 2", 0.0));
  g.trajectories.push_back(traj(policy, g.instance, "3 + 4 = 7", 1.0));
  return g;
}

PromptGroup scored(std::vector<double> seq, std::vector<double> reward) {
  PromptGroup g;
  g.instance = make_addchain({1, 1});
  for (std::size_t i = 0; i < seq.size(); ++i) {
    Trajectory t;
    t.response = {kEos};
    t.outcome.reward = reward[i];
    ProcessRewards pr;
    pr.token = {seq[i]};
    pr.sequence = seq[i];
    t.process = pr;
    g.trajectories.push_back(t);
  }
  return g;
}

}  // namespace

TEST_CASE("implicit reward of a doubled probability is beta ln 2") {
  const double lp = std::log(0.3);
  const ProcessRewards pr = process_rewards_from_logprobs(std::vector<double>{lp + std::log(2.0)},
                                                          std::vector<double>{lp}, 0.05);
  CHECK(pr.token[0] == doctest::Approx(0.0346574).epsilon(1e-6));
  CHECK(pr.sequence == pr.token[0]);
}

TEST_CASE("ratios 2 and 1/2 cancel in the sequence reward") {
  const std::vector<double> ref = {std::log(0.2), std::log(0.6)};
  const std::vector<double> phi = {ref[0] + std::log(2.0), ref[1] - std::log(2.0)};
  const ProcessRewards pr = process_rewards_from_logprobs(phi, ref, 0.05);
  CHECK(pr.token[0] == doctest::Approx(0.05 * std::log(2.0)));
  CHECK(pr.token[1] == doctest::Approx(-0.05 * std::log(2.0)));
  CHECK(std::abs(pr.sequence) < 1e-15);
}

TEST_CASE("q holds prefix sums and values shift them right") {
  const ProcessRewards pr = process_rewards_from_logprobs(
      std::vector<double>{1.0, 2.0, 3.0}, std::vector<double>{0.0, 0.0, 0.0}, 0.5);
  CHECK(pr.token == std::vector<double>{0.5, 1.0, 1.5});
  CHECK(pr.q == std::vector<double>{0.5, 1.5, 3.0});
  CHECK(pr.values == std::vector<double>{0.0, 0.5, 1.5, 3.0});
  CHECK(pr.sequence == 3.0);
  CHECK_THROWS_AS(process_rewards_from_logprobs(std::vector<double>{1.0}, std::vector<double>{}, 0.1),
                  ContractViolation);
}

TEST_CASE("CE loss at r = 0") {
  const LossGrad one = ce_loss_and_grad(0.0, 1.0);
  CHECK(one.loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(one.grad == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(ce_loss_and_grad(0.0, 0.75).grad == doctest::Approx(-0.25).epsilon(1e-14));
  CHECK(ce_loss_and_grad(0.0, 0.0).grad == doctest::Approx(0.5).epsilon(1e-14));
  CHECK_THROWS_AS(ce_loss_and_grad(0.0, 1.5), ContractViolation);
}

TEST_CASE("CE loss is finite at extreme rewards") {
  const LossGrad hi = ce_loss_and_grad(800.0, 0.0), lo = ce_loss_and_grad(-800.0, 1.0);
  CHECK(hi.loss == doctest::Approx(800.0));
  CHECK(lo.loss == doctest::Approx(800.0));
  CHECK(hi.grad == doctest::Approx(1.0));
  CHECK(lo.grad == doctest::Approx(-1.0));
}

TEST_CASE("DPO loss at a margin of 1") {
  const PairLossGrad pg = dpo_loss_and_grad(1.0, 0.0);
  CHECK(pg.loss == doctest::Approx(0.3132617).epsilon(1e-6));
  const double s = 1.0 / (1.0 + std::exp(1.0));
  CHECK(pg.grad_chosen == doctest::Approx(-s));
  CHECK(pg.grad_rejected == doctest::Approx(s));
  CHECK(dpo_loss_and_grad(0.3, 0.3).loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("DPO pairs cover every (correct, wrong) combination") {
  const PromptGroup g = scored({0, 0, 0, 0}, {1, 0, 0, 1});
  const auto pairs = dpo_pairs(g);
  CHECK(pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {0, 2}, {3, 1}, {3, 2}});
  CHECK(dpo_pairs(scored({0, 0}, {1, 1})).empty());
  CHECK(dpo_pairs(scored({0, 0}, {0.5, 0.4})).size() == 1);  // 0.5 binarizes to correct
}

TEST_CASE("pairwise accuracy: hand example, ties and absence") {
  // Correct {0.3, -0.1} vs wrong {0.0, -0.2}: 3 of 4 pairs ordered.
  const PromptGroup g = scored({0.3, -0.1, 0.0, -0.2}, {1, 1, 0, 0});
  CHECK(*pairwise_accuracy(std::vector<PromptGroup>{g}) == doctest::Approx(0.75));
  const PromptGroup tie = scored({0.1, 0.1}, {1, 0});
  CHECK(*pairwise_accuracy(std::vector<PromptGroup>{tie}) == 0.5);
  CHECK_FALSE(pairwise_accuracy(std::vector<PromptGroup>{scored({0.1, 0.2}, {0, 0})}).has_value());
  // Pooled over groups, not averaged per group.
  CHECK(*pairwise_accuracy(std::vector<PromptGroup>{g, tie}) == doctest::Approx(3.5 / 5.0));
}

TEST_CASE("a fresh PRM scores every response zero in both reference modes") {
  const ModelParams init = small_model(3);
  for (RefMode mode : {RefMode::kFrozenInitial, RefMode::kPolicyOld}) {
    const PrmState st = make_prm_state(init, mode, 0.05, AdamConfig{});
    std::vector<PromptGroup> gs = {group(init)};
    attach_process_rewards(st, gs);
    for (const Trajectory& t : gs[0].trajectories) {
      REQUIRE(t.process.has_value());
      CHECK(t.process->sequence == 0.0);
      for (double r : t.process->token) CHECK(r == 0.0);
    }
    CHECK(*pairwise_accuracy(gs) == 0.5);
  }
}

TEST_CASE("batched and single-trajectory rewards agree") {
  const ModelParams init = small_model(4);
  PrmState st = make_prm_state(init, RefMode::kFrozenInitial, 0.1, AdamConfig{});
  st.params = small_model(5);
  std::vector<PromptGroup> gs = {group(init)};
  attach_process_rewards(st, gs);
  for (Trajectory& t : gs[0].trajectories) {
    Trajectory bare = t;
    bare.ref_logprobs.clear();
    const ProcessRewards single = token_process_rewards(st, gs[0].instance, bare);
    for (std::size_t i = 0; i < single.token.size(); ++i)
      CHECK(t.process->token[i] == doctest::Approx(single.token[i]).epsilon(1e-12));
  }
}

TEST_CASE("zero learning rate leaves the PRM unchanged") {
  const ModelParams init = small_model(6);
  AdamConfig cfg;
  cfg.lr = 0.0;
  PrmState st = make_prm_state(init, RefMode::kFrozenInitial, 0.05, cfg);
  std::vector<PromptGroup> gs = {group(init)};
  const PrmUpdateResult res = prm_update(st, gs, PrmLoss::kCe);
  CHECK(res.items == 4);
  CHECK(res.mean_loss == doctest::Approx(std::log(2.0)));
  CHECK(st.params == init);
}

TEST_CASE("a CE step on a label-1 response raises its reward, the reference stays frozen") {
  const ModelParams init = small_model(7);
  AdamConfig cfg;
  cfg.lr = 1e-2;
  PrmState st = make_prm_state(init, RefMode::kFrozenInitial, 0.05, cfg);
  PromptGroup g;
  g.instance = make_addchain({3, 4});
  g.trajectories.push_back(traj(init, g.instance, "7", 1.0));
  std::vector<PromptGroup> gs = {g};
  const double before = token_process_rewards(st, g.instance, g.trajectories[0]).sequence;
  prm_update(st, gs, PrmLoss::kCe);
  const double after = token_process_rewards(st, g.instance, g.trajectories[0]).sequence;
  CHECK(before == 0.0);
  CHECK(after > before);
  CHECK(*st.reference == init);
  CHECK_FALSE(st.params == init);
}

TEST_CASE("repeated CE steps separate correct from wrong responses") {
  const ModelParams init = small_model(8);
  AdamConfig cfg;
  cfg.lr = 1e-2;
  PrmState st = make_prm_state(init, RefMode::kFrozenInitial, 0.05, cfg);
  std::vector<PromptGroup> gs = {group(init)};
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 30; ++i) {
    const double loss = prm_update(st, gs, PrmLoss::kCe).mean_loss;
    if (i == 0) first = loss;
    last = loss;
  }
  CHECK(last < first);
  CHECK(*prm_pairwise_accuracy(st, gs) == 1.0);
}

TEST_CASE("DPO update counts pairs and skips groups without both outcomes") {
  const ModelParams init = small_model(9);
  AdamConfig cfg;
  cfg.lr = 1e-2;
  PrmState st = make_prm_state(init, RefMode::kFrozenInitial, 0.05, cfg);
  std::vector<PromptGroup> gs = {group(init)};
  CHECK(prm_update(st, gs, PrmLoss::kDpo).items == 4);
  PromptGroup all_right;
  all_right.instance = make_addchain({3, 4});
  all_right.trajectories.push_back(traj(init, all_right.instance, "7", 1.0));
  std::vector<PromptGroup> none = {all_right};
  const ModelParams before = st.params;
  CHECK(prm_update(st, none, PrmLoss::kDpo).items == 0);
  CHECK(st.params == before);
}

TEST_CASE("double forward refreshes rewards only when enabled") {
  const ModelParams init = small_model(10);
  AdamConfig cfg;
  cfg.lr = 1e-2;
  PrmState st = make_prm_state(init, RefMode::kFrozenInitial, 0.05, cfg);
  std::vector<PromptGroup> gs = {group(init)};
  attach_process_rewards(st, gs);
  prm_update(st, gs, PrmLoss::kCe);
  std::vector<PromptGroup> off = gs, on = gs;
  recompute_double_forward(st, off, false);
  recompute_double_forward(st, on, true);
  CHECK(off[0].trajectories[0].process->sequence == 0.0);
  CHECK(on[0].trajectories[0].process->sequence > 0.0);
  CHECK(on[0].trajectories[1].process->sequence < 0.0);
}

TEST_CASE("PRM checkpoints round-trip") {
  const ModelParams init = small_model(11);
  AdamConfig cfg;
  cfg.lr = 1e-2;
  PrmState st = make_prm_state(init, RefMode::kFrozenInitial, 0.07, cfg);
  std::vector<PromptGroup> gs = {group(init)};
  prm_update(st, gs, PrmLoss::kDpo);
  const auto path = std::filesystem::temp_directory_path() / "prime_test_prm.ckpt";
  save_prm(path, st, PrmLoss::kDpo, task_vocab());
  PrmLoss loss = PrmLoss::kCe;
  const PrmState back = load_prm(path, &loss);
  CHECK(loss == PrmLoss::kDpo);
  CHECK(back.params == st.params);
  CHECK(*back.reference == *st.reference);
  CHECK(back.beta == 0.07);
  CHECK(back.optimizer.states()[0].t == 1);
  CHECK(back.optimizer.states()[3].m == st.optimizer.states()[3].m);
}

TEST_CASE("invalid PRM settings") {
  CHECK_THROWS_AS(make_prm_state(small_model(1), RefMode::kFrozenInitial, 0.0, AdamConfig{}),
                  ContractViolation);
  CHECK_THROWS_AS(parse_ref_mode("frozen"), ConfigError);
  CHECK_THROWS_AS(parse_prm_loss("mse"), ConfigError);
}
