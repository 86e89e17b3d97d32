#include "prime/advantage.hpp"

#include <atomic>
#include <cmath>

#include "prime/errors.hpp"

namespace prime {
namespace fault {
namespace {
std::atomic<bool> g_flip_process_sign{false};
}
void set_flip_process_sign(bool on) { g_flip_process_sign = on; }
bool flip_process_sign() { return g_flip_process_sign; }
}  // namespace fault

namespace {

// Population std below this is treated as a degenerate (constant) group.
constexpr double kStdFloor = 1e-12;

std::vector<double> discounted_suffix(std::span<const double> x, double gamma) {
  std::vector<double> out(x.size());
  double acc = 0.0;
  for (std::size_t t = x.size(); t-- > 0;) {
    acc = x[t] + gamma * acc;
    out[t] = acc;
  }
  return out;
}

const ProcessRewards& process_of(const Trajectory& t) {
  require(t.process.has_value(), "trajectory is missing process rewards");
  require(t.process->token.size() == t.response.size(),
          "process rewards do not cover every response token");
  return *t.process;
}

double loo_mean(std::span<const double> x, std::size_t i) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (j != i) s += x[j];
  return s / static_cast<double>(x.size() - 1);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd population(std::span<const double> x) {
  MeanStd m;
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(x.size());
  for (double v : x) m.std += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(x.size()));
  return m;
}

std::vector<double> outcomes(const PromptGroup& g) {
  std::vector<double> r;
  for (const Trajectory& t : g.trajectories) r.push_back(t.reward());
  return r;
}

std::vector<double> token_mean_process(const PromptGroup& g) {
  std::vector<double> r;
  for (const Trajectory& t : g.trajectories)
    r.push_back(process_of(t).sequence / static_cast<double>(t.length()));
  return r;
}

TokenAdvantages broadcast(const PromptGroup& g, std::span<const double> per_response) {
  TokenAdvantages out(g.k());
  for (std::size_t i = 0; i < g.k(); ++i)
    out[i].assign(g.trajectories[i].length(), per_response[i]);
  return out;
}

}  // namespace

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::kRloo: return "rloo";
    case Estimator::kGrpo: return "grpo";
    case Estimator::kReinforce: return "reinforce";
    case Estimator::kPpo: return "ppo";
    case Estimator::kPrmValue: return "prm_value";
  }
  return "?";
}

std::string to_string(ProcessBaseline b) {
  return b == ProcessBaseline::kTokenMean ? "token_mean" : "sequence_total";
}

Estimator parse_estimator(const std::string& s) {
  if (s == "rloo") return Estimator::kRloo;
  if (s == "grpo") return Estimator::kGrpo;
  if (s == "reinforce") return Estimator::kReinforce;
  if (s == "ppo") return Estimator::kPpo;
  if (s == "prm_value") return Estimator::kPrmValue;
  throw ConfigError("unknown estimator '" + s + "' (rloo | grpo | reinforce | ppo | prm_value)");
}

ProcessBaseline parse_process_baseline(const std::string& s) {
  if (s == "token_mean") return ProcessBaseline::kTokenMean;
  if (s == "sequence_total") return ProcessBaseline::kSequenceTotal;
  throw ConfigError("unknown process baseline '" + s + "' (token_mean | sequence_total)");
}

void AdvantageCfg::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
}

std::vector<double> loo_outcome_advantages(const PromptGroup& group) {
  require(group.k() >= 2, "leave-one-out advantages need K >= 2");
  const std::vector<double> r = outcomes(group);
  std::vector<double> a(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) a[i] = r[i] - loo_mean(r, i);
  return a;
}

TokenAdvantages prime_advantages(const PromptGroup& group, const AdvantageCfg& cfg) {
  require(group.k() >= 2, "leave-one-out advantages need K >= 2");
  std::vector<double> outcome(group.k(), 0.0);
  if (cfg.use_outcome) outcome = loo_outcome_advantages(group);
  TokenAdvantages out = broadcast(group, outcome);
  if (!cfg.use_process_rewards) return out;

  std::vector<double> per_response;
  if (cfg.baseline == ProcessBaseline::kTokenMean) {
    per_response = token_mean_process(group);
  } else {
    for (const Trajectory& t : group.trajectories) per_response.push_back(process_of(t).sequence);
  }
  const double sign = fault::flip_process_sign() ? -1.0 : 1.0;
  for (std::size_t i = 0; i < group.k(); ++i) {
    const ProcessRewards& pr = process_of(group.trajectories[i]);
    const double b = loo_mean(per_response, i);
    std::vector<double> centered(pr.token.size());
    for (std::size_t t = 0; t < centered.size(); ++t) centered[t] = pr.token[t] - b;
    const std::vector<double> ret = discounted_suffix(centered, cfg.gamma);
    for (std::size_t t = 0; t < ret.size(); ++t) out[i][t] += sign * ret[t];
  }
  return out;
}

TokenAdvantages grpo_advantages(const PromptGroup& group, const AdvantageCfg& cfg) {
  require(group.k() >= 2, "GRPO advantages need K >= 2");
  std::vector<double> outcome(group.k(), 0.0);
  if (cfg.use_outcome) {
    const std::vector<double> r = outcomes(group);
    const MeanStd ms = population(r);
    if (ms.std > kStdFloor) {
      for (std::size_t i = 0; i < r.size(); ++i) outcome[i] = (r[i] - ms.mean) / ms.std;
    }
  }
  TokenAdvantages out = broadcast(group, outcome);
  if (!cfg.use_process_rewards) return out;

  const MeanStd ms = population(token_mean_process(group));
  if (!(ms.std > kStdFloor)) return out;
  for (std::size_t i = 0; i < group.k(); ++i) {
    const ProcessRewards& pr = process_of(group.trajectories[i]);
    std::vector<double> normed(pr.token.size());
    for (std::size_t t = 0; t < normed.size(); ++t) normed[t] = (pr.token[t] - ms.mean) / ms.std;
    const std::vector<double> ret = discounted_suffix(normed, cfg.gamma);
    for (std::size_t t = 0; t < ret.size(); ++t) out[i][t] += ret[t];
  }
  return out;
}

TokenAdvantages reinforce_advantages(const PromptGroup& group, const AdvantageCfg& cfg) {
  TokenAdvantages out(group.k());
  for (std::size_t i = 0; i < group.k(); ++i) {
    const Trajectory& t = group.trajectories[i];
    out[i].assign(t.length(), cfg.use_outcome ? t.reward() : 0.0);
    if (!cfg.use_process_rewards) continue;
    const std::vector<double> ret = discounted_suffix(process_of(t).token, cfg.gamma);
    for (std::size_t s = 0; s < ret.size(); ++s) out[i][s] += ret[s];
  }
  return out;
}

std::vector<double> gae_from_values(std::span<const double> rewards,
                                    std::span<const double> values, double gamma,
                                    double lambda) {
  require(values.size() == rewards.size() + 1, "GAE needs one value per position plus the final one");
  const std::size_t n = rewards.size();
  std::vector<double> adv(n);
  double acc = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next = t + 1 < n ? values[t + 1] : 0.0;
    const double delta = rewards[t] + gamma * next - values[t];
    acc = delta + gamma * lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

std::vector<double> critic_rewards(const Trajectory& traj, const AdvantageCfg& cfg) {
  std::vector<double> r(traj.length(), 0.0);
  if (r.empty()) return r;
  if (cfg.use_process_rewards) {
    const ProcessRewards& pr = process_of(traj);
    for (std::size_t t = 0; t < r.size(); ++t) r[t] = pr.token[t];
  }
  if (cfg.use_outcome) r.back() += traj.reward();
  return r;
}

std::vector<double> gae_advantages(const PromptInstance& inst, const Trajectory& traj,
                                   const ValueParams& vparams, const AdvantageCfg& cfg) {
  const std::vector<double> values = value_predict(vparams, inst.prompt, traj.response);
  return gae_from_values(critic_rewards(traj, cfg), values, cfg.gamma, cfg.lambda);
}

TokenAdvantages prm_value_advantages(const PromptGroup& group) {
  TokenAdvantages out(group.k());
  for (std::size_t i = 0; i < group.k(); ++i) {
    const Trajectory& t = group.trajectories[i];
    const ProcessRewards& pr = process_of(t);
    out[i].resize(t.length());
    for (std::size_t s = 0; s < t.length(); ++s) out[i][s] = t.reward() - pr.values[s];
  }
  return out;
}

TokenAdvantages compute_advantages(const PromptGroup& group, const AdvantageCfg& cfg,
                                   const ValueParams* vparams) {
  switch (cfg.estimator) {
    case Estimator::kRloo: return prime_advantages(group, cfg);
    case Estimator::kGrpo: return grpo_advantages(group, cfg);
    case Estimator::kReinforce: return reinforce_advantages(group, cfg);
    case Estimator::kPrmValue: return prm_value_advantages(group);
    case Estimator::kPpo: {
      require(vparams != nullptr, "PPO advantages need a value model");
      std::vector<SequenceRef> refs;
      for (std::size_t i = 0; i < group.k(); ++i) refs.push_back(group.ref(i));
      const auto values = batch_values(*vparams, refs);
      TokenAdvantages out(group.k());
      for (std::size_t i = 0; i < group.k(); ++i)
        out[i] = gae_from_values(critic_rewards(group.trajectories[i], cfg), values[i],
                                 cfg.gamma, cfg.lambda);
      return out;
    }
  }
  return {};
}

FilterResult filter_prompts(std::vector<PromptGroup> groups, double lo, double hi) {
  require(lo >= 0.0 && lo < hi && hi <= 1.0, "filter bounds must satisfy 0 <= lo < hi <= 1");
  FilterResult res;
  const std::size_t total = groups.size();
  for (PromptGroup& g : groups) {
    const double acc = g.accuracy();
    g.kept = acc >= lo && acc <= hi;
    if (g.kept) res.kept.push_back(std::move(g));
  }
  if (total > 0) {
    res.filtered_fraction =
        static_cast<double>(total - res.kept.size()) / static_cast<double>(total);
  }
  return res;
}

}  // namespace prime
