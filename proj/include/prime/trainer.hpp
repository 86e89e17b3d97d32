#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prime/config.hpp"
#include "prime/model.hpp"
#include "prime/prm.hpp"
#include "prime/rollout.hpp"

namespace prime {

struct MetricsRow {
  std::int64_t step = 0;
  double reward_mean = 0.0;  // pre-filter mean outcome reward
  double filtered_frac = 0.0;
  std::optional<double> prm_acc;  // absent when no (correct, wrong) pair exists
  double prm_loss = 0.0;
  double policy_obj = 0.0;
  double resp_len = 0.0;
  double eval_acc = 0.0;
  double wall_ms = 0.0;  // 0 in deterministic mode
  bool operator==(const MetricsRow&) const = default;
};

inline constexpr const char* kMetricsHeader =
    "step,reward_mean,filtered_frac,prm_acc,prm_loss,policy_obj,resp_len,eval_acc,wall_ms";

std::string format_metrics_row(const MetricsRow& row);
// Throws ConfigError naming `origin` and the line on malformed input.
std::vector<MetricsRow> parse_metrics_csv(const std::string& text, const std::string& origin);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct TrainState {
  ModelParams policy;
  ModelParams old_policy;
  PrmState prm;
  std::optional<ValueParams> value;  // PPO variant only
  ParamOptimizer policy_opt;
  ParamOptimizer value_opt;
  std::int64_t step = 0;  // completed outer steps
  std::uint64_t seed = 0;
  double last_eval = 0.0;
};

struct TrainOptions {
  bool deterministic = true;  // single-threaded, wall_ms written as 0
  int threads = 1;
};

// Reads PRIME_THREADS; --deterministic on the CLI overrides it.
TrainOptions options_from_env(bool deterministic);

struct ClipResult {
  double objective = 0.0;
  std::vector<double> grad;  // d objective / d new log-prob
  std::size_t clipped = 0;   // tokens on the clipped branch
};

// mean_t min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t), rho_t = exp(new - old).
ClipResult ppo_clip_objective(std::span<const double> new_logprobs,
                              std::span<const double> old_logprobs,
                              std::span<const double> advantages, double eps);

struct ValueFit {
  double mse = 0.0;
  std::vector<std::vector<double>> grad;  // dLoss/dV per trained position
};

// MSE of v(y_<t), t < |y|, against the Monte-Carlo return of `rewards`.
ValueFit value_loss(std::span<const std::vector<double>> values,
                    std::span<const std::vector<double>> rewards, double gamma);

// One optimizer step on that MSE over every trajectory of `groups`.
double value_update(ValueParams& vparams, ParamOptimizer& opt,
                    std::span<const PromptGroup> groups, const AdvantageCfg& cfg);

// K samples per prompt; trajectory (i, j) draws from stream (seed, step, i, j).
std::vector<PromptGroup> rollout(const ModelParams& policy,
                                 std::span<const PromptInstance> prompts, const RunConfig& cfg,
                                 std::int64_t step, const TrainOptions& opt);

// Greedy decode, verify, mean outcome reward.
double evaluate(const ModelParams& policy, std::span<const PromptInstance> eval_set,
                std::size_t max_len);
std::vector<PromptInstance> make_eval_set(const RunConfig& cfg);

// Teacher-forced cross-entropy on ground-truth answers (+EOS).
ModelParams sft_warmup(ModelParams params, const RunConfig& cfg);

// Initial policy, old policy, PRM and reference all share one set of weights.
TrainState init_state(const RunConfig& cfg);

// One outer iteration of the PRIME loop.
MetricsRow train_step(TrainState& state, const RunConfig& cfg, const TrainOptions& opt);

// Runs steps until state.step == cfg.steps.
std::vector<MetricsRow> run_training(TrainState& state, const RunConfig& cfg,
                                     const TrainOptions& opt,
                                     const std::function<void(const MetricsRow&, const TrainState&)>& on_row = {});

void checkpoint_save(const TrainState& state, const RunConfig& cfg,
                     const std::filesystem::path& path);
// Throws LoadError on version mismatch, corruption or missing records.
TrainState checkpoint_load(const std::filesystem::path& path, RunConfig* cfg_out = nullptr);

}  // namespace prime
