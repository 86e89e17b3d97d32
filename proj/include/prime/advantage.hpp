#pragma once

#include <span>
#include <string>
#include <vector>

#include "prime/model.hpp"
#include "prime/rollout.hpp"

namespace prime {

enum class Estimator {
  kRloo,       // leave-one-out; with process rewards this is the PRIME estimator
  kGrpo,
  kReinforce,
  kPpo,        // GAE over a learned value model
  kPrmValue,   // implicit-PRM values as the baseline
};

// Which per-response quantity forms the leave-one-out process baseline.
enum class ProcessBaseline {
  kTokenMean,      // r_phi(y^j) / |y^j|
  kSequenceTotal,  // r_phi(y^j)
};

std::string to_string(Estimator e);
std::string to_string(ProcessBaseline b);
Estimator parse_estimator(const std::string& s);
ProcessBaseline parse_process_baseline(const std::string& s);

struct AdvantageCfg {
  Estimator estimator = Estimator::kRloo;
  double gamma = 1.0;
  double lambda = 1.0;
  ProcessBaseline baseline = ProcessBaseline::kTokenMean;
  bool use_process_rewards = true;
  bool use_outcome = true;
  void validate() const;
  // Whether this configuration reads implicit process rewards at all.
  bool needs_process_rewards() const {
    return use_process_rewards || estimator == Estimator::kPrmValue;
  }
};

using TokenAdvantages = std::vector<std::vector<double>>;  // [response][token]

// A^i = r_o(y^i) - mean_{j != i} r_o(y^j).
std::vector<double> loo_outcome_advantages(const PromptGroup& group);

// LOO process return plus LOO outcome, computed separately and summed.
TokenAdvantages prime_advantages(const PromptGroup& group, const AdvantageCfg& cfg);
// Group-normalized outcome plus group-normalized process return; std = 0 zeroes a component.
TokenAdvantages grpo_advantages(const PromptGroup& group, const AdvantageCfg& cfg);
// r_o plus the discounted process return, no baseline.
TokenAdvantages reinforce_advantages(const PromptGroup& group, const AdvantageCfg& cfg);

// GAE(gamma, lambda) from per-token rewards and values v(y_<t), t = 0..T, where
// values[T] is ignored: the state after the terminal token has value 0.
std::vector<double> gae_from_values(std::span<const double> rewards,
                                    std::span<const double> values, double gamma,
                                    double lambda);
// Per-token rewards for the critic: r_o on the last token, plus r_phi(y_t)
// on every token when process rewards are enabled and attached.
std::vector<double> critic_rewards(const Trajectory& traj, const AdvantageCfg& cfg);
std::vector<double> gae_advantages(const PromptInstance& inst, const Trajectory& traj,
                                   const ValueParams& vparams, const AdvantageCfg& cfg);

// A^i_t = r_o(y^i) - v_phi(y^i_<t) with v_phi from the attached process rewards.
TokenAdvantages prm_value_advantages(const PromptGroup& group);

// Dispatch on cfg.estimator; `vparams` is required for kPpo.
TokenAdvantages compute_advantages(const PromptGroup& group, const AdvantageCfg& cfg,
                                   const ValueParams* vparams);

struct FilterResult {
  std::vector<PromptGroup> kept;
  double filtered_fraction = 0.0;
};

// Keeps groups with lo <= accuracy <= hi.
FilterResult filter_prompts(std::vector<PromptGroup> groups, double lo, double hi);

// Test-only: flips the sign of the process term in prime_advantages so the
// oracle-equivalence check can prove it detects a broken estimator.
namespace fault {
void set_flip_process_sign(bool on);
bool flip_process_sign();
}  // namespace fault

}  // namespace prime
