#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "prime/advantage.hpp"
#include "prime/model.hpp"
#include "prime/prm.hpp"
#include "prime/tasks.hpp"

namespace prime {

enum class ForwardMode { kSingle, kDouble };
enum class PrmMode { kOnline, kOffline };

// Full description of one experiment. Every field has a key in the flat
// `key = value` config format; see parse_config.
struct RunConfig {
  TaskSpec task;
  Dims dims;

  int k_samples = 4;       // responses per prompt
  int batch_prompts = 64;  // prompts per outer step
  int steps = 300;         // outer iterations N
  int epochs = 1;          // optimizer passes per rollout batch

  double policy_lr = 3e-3;
  double prm_lr = 3e-3;
  double value_lr = 1e-2;
  double weight_decay = 0.0;

  double beta = 0.05;
  double clip_eps = 0.2;
  AdvantageCfg advantage;

  RefMode ref_mode = RefMode::kFrozenInitial;
  ForwardMode forward_mode = ForwardMode::kSingle;
  PrmLoss prm_loss = PrmLoss::kCe;
  PrmMode prm_mode = PrmMode::kOnline;
  int offline_pretrain_steps = 0;  // PRM updates on initial-policy rollouts before freezing

  bool filter = true;
  double filter_lo = 0.2;
  double filter_hi = 0.8;

  double temperature = 1.0;
  int max_len = 6;

  // Supervised warm-up producing the initial policy from random weights.
  int sft_steps = 250;
  int sft_batch = 32;
  double sft_lr = 1e-2;

  std::uint64_t seed = 1;
  int eval_size = 128;
  int eval_every = 1;
  int checkpoint_every = 0;  // 0: final checkpoint only
  std::string out_dir = "runs/default";

  // Throws ConfigError on any violated invariant.
  void validate() const;
  SamplerCfg sampler() const;
};

// Flat `key = value` lines, `#` starts a comment. Unknown keys, malformed
// values and invalid combinations are errors naming the line.
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
RunConfig parse_config(const std::filesystem::path& path);
// Every key with its resolved value, parseable by parse_config_text.
std::string render_config(const RunConfig& cfg);

std::string to_string(ForwardMode m);
std::string to_string(PrmMode m);

}  // namespace prime
