#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prime/advantage.hpp"
#include "prime/rng.hpp"
#include "prime/rollout.hpp"

namespace prime {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Random group for oracle comparisons: K in [2, max_k], response lengths in
// [1, max_len], outcome and per-token process rewards uniform in [-1, 1].
PromptGroup random_group(Rng& rng, std::size_t max_k, std::size_t max_len);

// Straight-line reimplementations used as oracles. They share no code with
// the estimators in advantage.cpp.
namespace oracle {
std::vector<double> loo_outcome(const PromptGroup& g);
TokenAdvantages prime(const PromptGroup& g, double gamma, bool token_mean, bool use_process,
                      bool use_outcome);
TokenAdvantages grpo(const PromptGroup& g, double gamma, bool use_process, bool use_outcome);
TokenAdvantages reinforce(const PromptGroup& g, double gamma, bool use_process, bool use_outcome);
// delta-sum form: A_t = sum_l (gamma lambda)^l delta_{t+l}.
std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values,
                        double gamma, double lambda);
TokenAdvantages prm_value(const PromptGroup& g);
}  // namespace oracle

// Gradient checks, telescoping, zero-init, LOO zero-sum, GRPO normalization,
// CE identity, clip branches and bias cancellation.
std::vector<CheckResult> run_invariant_suite(std::uint64_t seed = 7);

// Each estimator against its oracle on `groups` random groups.
std::vector<CheckResult> run_oracle_suite(std::size_t groups = 1000, std::uint64_t seed = 11);

// Largest |estimator - oracle| for the PRIME estimator over `groups` random groups.
double prime_oracle_error(std::size_t groups, std::uint64_t seed);

std::string format_results(const std::vector<CheckResult>& results);

}  // namespace prime
