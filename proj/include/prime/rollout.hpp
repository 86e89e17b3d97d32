#pragma once

#include <optional>
#include <span>
#include <vector>

#include "prime/model.hpp"
#include "prime/tasks.hpp"

namespace prime {

// Implicit process rewards of one response.
struct ProcessRewards {
  std::vector<double> token;   // r_phi(y_t)
  double sequence = 0.0;       // r_phi(y) = sum of token rewards
  std::vector<double> q;       // q^t: inclusive prefix sums, length |y|
  std::vector<double> values;  // v(y_<t) for t = 0..|y|; values[0] = 0
};

struct Trajectory {
  std::vector<Token> response;
  std::vector<double> old_logprobs;  // log pi_theta_old(y_t | y_<t), recorded at sampling
  bool truncated = false;
  OutcomeLabel outcome;
  std::vector<double> ref_logprobs;  // filled when process rewards are computed
  std::optional<ProcessRewards> process;
  std::vector<double> advantages;    // per token

  double reward() const { return outcome.reward; }
  // Binarized correctness used by the filter, DPO pairs and PRM accuracy.
  bool correct() const { return outcome.reward >= 0.5; }
  std::size_t length() const { return response.size(); }
};

struct PromptGroup {
  PromptInstance instance;
  std::vector<Trajectory> trajectories;
  bool kept = true;

  std::size_t k() const { return trajectories.size(); }
  // Mean binarized correctness over the K samples.
  double accuracy() const;
  SequenceRef ref(std::size_t i) const {
    return {instance.prompt, trajectories[i].response};
  }
};

}  // namespace prime
