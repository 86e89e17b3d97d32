#include "prime/rollout.hpp"

namespace prime {

double PromptGroup::accuracy() const {
  if (trajectories.empty()) return 0.0;
  double c = 0.0;
  for (const Trajectory& t : trajectories) c += t.correct() ? 1.0 : 0.0;
  return c / static_cast<double>(trajectories.size());
}

}  // namespace prime
