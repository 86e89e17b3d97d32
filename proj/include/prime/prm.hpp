#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prime/checkpoint.hpp"
#include "prime/model.hpp"
#include "prime/rollout.hpp"

namespace prime {

// Where the denominator log-probs of the implicit reward come from.
enum class RefMode {
  kFrozenInitial,  // a frozen copy of the initial policy
  kPolicyOld,      // the rollout policy's own log-probs, stored on each trajectory
};
enum class PrmLoss { kCe, kDpo };

std::string to_string(RefMode m);
std::string to_string(PrmLoss l);
RefMode parse_ref_mode(const std::string& s);
PrmLoss parse_prm_loss(const std::string& s);

// Implicit PRM pi_phi together with its reference and optimizer.
struct PrmState {
  ModelParams params;
  RefMode ref_mode = RefMode::kFrozenInitial;
  std::optional<ModelParams> reference;  // set iff ref_mode == kFrozenInitial
  double beta = 0.05;
  ParamOptimizer optimizer;
};

// pi_phi and (in frozen mode) pi_ref are both copies of `init`.
PrmState make_prm_state(const ModelParams& init, RefMode mode, double beta,
                        const AdamConfig& opt);

// r_t = beta * (phi_t - ref_t), q = prefix sums, values = q shifted right by one.
ProcessRewards process_rewards_from_logprobs(std::span<const double> phi,
                                             std::span<const double> ref, double beta);

// Single-trajectory reward evaluation; uses the trajectory's old log-probs as
// reference in kPolicyOld mode.
ProcessRewards token_process_rewards(const PrmState& state, const PromptInstance& inst,
                                     const Trajectory& traj);

// Batched form: fills ref_logprobs and process on every trajectory.
void attach_process_rewards(const PrmState& state, std::span<PromptGroup> groups);

struct LossGrad {
  double loss = 0.0;
  double grad = 0.0;  // dLoss / dr
};

// Binary cross-entropy on sigma(r) with a soft label in [0, 1].
LossGrad ce_loss_and_grad(double r, double label);

struct PairLossGrad {
  double loss = 0.0;
  double grad_chosen = 0.0;
  double grad_rejected = 0.0;
};

// -log sigma(r_chosen - r_rejected).
PairLossGrad dpo_loss_and_grad(double r_chosen, double r_rejected);

// (correct, incorrect) index pairs of one group; empty means "skip this group".
std::vector<std::pair<std::size_t, std::size_t>> dpo_pairs(const PromptGroup& group);

struct PrmUpdateResult {
  double mean_loss = 0.0;
  std::size_t items = 0;  // trajectories (CE) or pairs (DPO) that contributed
};

// One optimizer step of pi_phi on the retained groups. Reference log-probs
// are taken from each trajectory (computed by attach_process_rewards if absent).
PrmUpdateResult prm_update(PrmState& state, std::span<PromptGroup> groups, PrmLoss loss);

// Fraction of (correct, wrong) pairs with r(correct) > r(wrong), ties 0.5,
// using the process rewards already attached. Absent when no group has both.
std::optional<double> pairwise_accuracy(std::span<const PromptGroup> groups);
// Same, rescoring with the given state first.
std::optional<double> prm_pairwise_accuracy(const PrmState& state,
                                            std::span<const PromptGroup> groups);

// Double-forward: refresh process rewards with the updated PRM. No-op when disabled.
void recompute_double_forward(const PrmState& state, std::span<PromptGroup> groups,
                              bool enabled);

void put_prm(Container& c, const std::string& prefix, const PrmState& state);
PrmState get_prm(const Container& c, const std::string& prefix);

// PRM checkpoint: lm checkpoint layout plus {beta, ref mode, loss kind}.
void save_prm(const std::filesystem::path& path, const PrmState& state, PrmLoss loss,
              const Vocab& vocab);
PrmState load_prm(const std::filesystem::path& path, PrmLoss* loss_out = nullptr);

}  // namespace prime
