#include "prime/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "prime/checkpoint.hpp"
#include "prime/errors.hpp"
#include "prime/rng.hpp"

namespace prime {
namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<PromptGroup> sample_groups(const ModelParams& policy,
                                       std::span<const PromptInstance> prompts,
                                       const RunConfig& cfg, Stream tag, std::int64_t step,
                                       const TrainOptions& opt) {
  const std::size_t k = static_cast<std::size_t>(cfg.k_samples);
  std::vector<PromptGroup> groups(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    groups[i].instance = prompts[i];
    groups[i].trajectories.resize(k);
  }
  const SamplerCfg sampler = cfg.sampler();
  parallel_for(prompts.size() * k, opt.deterministic ? 1 : opt.threads, [&](std::size_t flat) {
    const std::size_t i = flat / k, j = flat % k;
    Rng rng(cfg.seed, {static_cast<std::uint64_t>(tag), static_cast<std::uint64_t>(step), i, j});
    Sample s = sample_response(policy, prompts[i].prompt, sampler, rng);
    Trajectory& t = groups[i].trajectories[j];
    t.outcome = verify(prompts[i], s.tokens);
    t.response = std::move(s.tokens);
    t.old_logprobs = std::move(s.logprobs);
    t.truncated = s.truncated;
  });
  return groups;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.8f", v);
  return buf;
}

double policy_update(TrainState& state, std::span<const PromptGroup> groups,
                     const RunConfig& cfg) {
  std::vector<SequenceRef> refs;
  std::vector<double> old_lp, adv;
  for (const PromptGroup& g : groups) {
    for (std::size_t i = 0; i < g.k(); ++i) {
      const Trajectory& t = g.trajectories[i];
      refs.push_back(g.ref(i));
      old_lp.insert(old_lp.end(), t.old_logprobs.begin(), t.old_logprobs.end());
      adv.insert(adv.end(), t.advantages.begin(), t.advantages.end());
    }
  }
  const TokenBatch batch = make_logprob_batch(refs, state.policy.dims.context);
  if (batch.rows() == 0) return 0.0;
  double objective = 0.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    Tape tape;
    const BoundParams bound = bind(tape, state.policy);
    const NodeId logp = build_token_logprobs(tape, bound, batch);
    const ClipResult clip =
        ppo_clip_objective(tape.value(logp).values(), old_lp, adv, cfg.clip_eps);
    if (e == 0) objective = clip.objective;
    // Minimize -objective through the surrogate (-grad) . logp.
    Tensor weights({1, batch.rows()});
    for (std::size_t r = 0; r < batch.rows(); ++r) weights[r] = -clip.grad[r];
    const NodeId surrogate = tape.matmul(tape.leaf(std::move(weights)), logp);
    state.policy_opt.step(state.policy, collect_grads(backward(tape, surrogate), bound));
  }
  return objective;
}

ValueParams value_from_policy(const ModelParams& policy) {
  ValueParams v = zero_value_params(policy.dims, policy.vocab);
  v.embed = policy.embed;
  v.w_hidden = policy.w_hidden;
  v.b_hidden = policy.b_hidden;
  return v;
}

}  // namespace

TrainOptions options_from_env(bool deterministic) {
  TrainOptions o;
  o.deterministic = deterministic;
  o.threads = 1;
  if (const char* env = std::getenv("PRIME_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) o.threads = n;
  }
  if (deterministic) o.threads = 1;
  return o;
}

std::string format_metrics_row(const MetricsRow& r) {
  std::string out = std::to_string(r.step);
  for (double v : {r.reward_mean, r.filtered_frac}) out += "," + fmt(v);
  out += ",";
  if (r.prm_acc) out += fmt(*r.prm_acc);
  for (double v : {r.prm_loss, r.policy_obj, r.resp_len, r.eval_acc, r.wall_ms}) out += "," + fmt(v);
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::vector<MetricsRow> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (lineno == 1) {
      if (line != kMetricsHeader) throw ConfigError(where + ": unexpected metrics header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw ConfigError(where + ": expected 9 fields, got " + std::to_string(f.size()));
    try {
      auto num = [](const std::string& s) {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
      };
      MetricsRow r;
      r.step = std::stoll(f[0]);
      r.reward_mean = num(f[1]);
      r.filtered_frac = num(f[2]);
      if (!f[3].empty()) r.prm_acc = num(f[3]);
      r.prm_loss = num(f[4]);
      r.policy_obj = num(f[5]);
      r.resp_len = num(f[6]);
      r.eval_acc = num(f[7]);
      r.wall_ms = num(f[8]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ConfigError(where + ": malformed number");
    }
  }
  if (lineno == 0) throw ConfigError(origin + ": empty metrics file");
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read metrics file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str(), path.string());
}

ClipResult ppo_clip_objective(std::span<const double> new_logprobs,
                              std::span<const double> old_logprobs,
                              std::span<const double> advantages, double eps) {
  require(new_logprobs.size() == old_logprobs.size() && new_logprobs.size() == advantages.size(),
          "ppo_clip_objective: per-token vectors differ in length");
  ClipResult res;
  const std::size_t n = new_logprobs.size();
  res.grad.assign(n, 0.0);
  if (n == 0) return res;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double rho = std::exp(new_logprobs[t] - old_logprobs[t]);
    if (!std::isfinite(rho)) {
      throw NumericFault("non-finite probability ratio at token " + std::to_string(t));
    }
    const double a = advantages[t];
    const double clipped_rho = std::clamp(rho, 1.0 - eps, 1.0 + eps);
    const double unclipped = rho * a;
    const double clipped = clipped_rho * a;
    if (clipped < unclipped) {
      // Clipped branch is the minimum: constant in rho.
      res.objective += clipped;
      ++res.clipped;
    } else {
      res.objective += unclipped;
      res.grad[t] = unclipped * inv;  // d(rho A)/d log pi = rho A
    }
  }
  res.objective *= inv;
  return res;
}

ValueFit value_loss(std::span<const std::vector<double>> values,
                    std::span<const std::vector<double>> rewards, double gamma) {
  require(values.size() == rewards.size(), "value_loss: one reward list per value list");
  ValueFit fit;
  fit.grad.resize(values.size());
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(values[i].size() == rewards[i].size() + 1, "value_loss: value/reward length mismatch");
    n += rewards[i].size();
  }
  if (n == 0) return fit;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& r = rewards[i];
    fit.grad[i].assign(r.size(), 0.0);
    double ret = 0.0;
    for (std::size_t t = r.size(); t-- > 0;) {
      ret = r[t] + gamma * ret;
      const double diff = values[i][t] - ret;
      fit.mse += diff * diff;
      fit.grad[i][t] = 2.0 * diff / static_cast<double>(n);
    }
  }
  fit.mse /= static_cast<double>(n);
  return fit;
}

double value_update(ValueParams& vparams, ParamOptimizer& opt,
                    std::span<const PromptGroup> groups, const AdvantageCfg& cfg) {
  std::vector<SequenceRef> refs;
  std::vector<std::vector<double>> rewards;
  for (const PromptGroup& g : groups) {
    for (std::size_t i = 0; i < g.k(); ++i) {
      refs.push_back(g.ref(i));
      rewards.push_back(critic_rewards(g.trajectories[i], cfg));
    }
  }
  if (refs.empty()) return 0.0;
  const TokenBatch batch = make_value_batch(refs, vparams.dims.context);
  Tape tape;
  const BoundParams bound = bind(tape, vparams);
  const NodeId out = build_outputs(tape, bound, batch);
  const Tensor& v = tape.value(out);
  std::vector<std::vector<double>> values(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i)
    values[i].assign(v.data().begin() + static_cast<std::ptrdiff_t>(batch.offsets[i]),
                     v.data().begin() + static_cast<std::ptrdiff_t>(batch.offsets[i + 1]));
  const ValueFit fit = value_loss(values, rewards, cfg.gamma);
  Tensor weights({1, batch.rows()});
  for (std::size_t i = 0; i < refs.size(); ++i)
    for (std::size_t t = 0; t < fit.grad[i].size(); ++t) weights[batch.offsets[i] + t] = fit.grad[i][t];
  const NodeId surrogate = tape.matmul(tape.leaf(std::move(weights)), out);
  opt.step(vparams, collect_grads(backward(tape, surrogate), bound));
  return fit.mse;
}

std::vector<PromptGroup> rollout(const ModelParams& policy,
                                 std::span<const PromptInstance> prompts, const RunConfig& cfg,
                                 std::int64_t step, const TrainOptions& opt) {
  return sample_groups(policy, prompts, cfg, Stream::kRollout, step, opt);
}

double evaluate(const ModelParams& policy, std::span<const PromptInstance> eval_set,
                std::size_t max_len) {
  if (eval_set.empty()) return 0.0;
  SamplerCfg greedy;
  greedy.temperature = 0.0;
  greedy.max_len = max_len;
  Rng unused(0);
  double total = 0.0;
  for (const PromptInstance& inst : eval_set) {
    const Sample s = sample_response(policy, inst.prompt, greedy, unused);
    total += verify(inst, s.tokens).reward;
  }
  return total / static_cast<double>(eval_set.size());
}

std::vector<PromptInstance> make_eval_set(const RunConfig& cfg) {
  return generate_batch(cfg.task, static_cast<std::size_t>(cfg.eval_size),
                        derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::kEvalPrompts)}));
}

ModelParams sft_warmup(ModelParams params, const RunConfig& cfg) {
  AdamConfig ac;
  ac.lr = cfg.sft_lr;
  ParamOptimizer opt(ac);
  for (int s = 0; s < cfg.sft_steps; ++s) {
    const auto prompts = generate_batch(
        cfg.task, static_cast<std::size_t>(cfg.sft_batch),
        derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::kSft), static_cast<std::uint64_t>(s)}));
    std::vector<std::vector<Token>> answers;
    answers.reserve(prompts.size());
    for (const auto& p : prompts) {
      answers.push_back(p.truth);
      answers.back().push_back(kEos);
    }
    std::vector<SequenceRef> refs;
    for (std::size_t i = 0; i < prompts.size(); ++i) refs.push_back({prompts[i].prompt, answers[i]});
    const TokenBatch batch = make_logprob_batch(refs, params.dims.context);
    Tape tape;
    const BoundParams bound = bind(tape, params);
    const NodeId logp = build_token_logprobs(tape, bound, batch);
    const NodeId loss = tape.scale(tape.sum(logp), -1.0 / static_cast<double>(batch.rows()));
    opt.step(params, collect_grads(backward(tape, loss), bound));
  }
  return params;
}

TrainState init_state(const RunConfig& cfg) {
  cfg.validate();
  const std::size_t vocab = task_vocab().size();
  TrainState st;
  st.seed = cfg.seed;
  ModelParams init = init_params(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::kInit)}),
                                 cfg.dims, vocab);
  init = sft_warmup(std::move(init), cfg);

  st.policy = clone_params(init);
  st.old_policy = clone_params(init);
  AdamConfig prm_opt;
  prm_opt.lr = cfg.prm_lr;
  st.prm = make_prm_state(init, cfg.ref_mode, cfg.beta, prm_opt);

  AdamConfig pol;
  pol.lr = cfg.policy_lr;
  pol.weight_decay = cfg.weight_decay;
  st.policy_opt = ParamOptimizer(pol);
  AdamConfig val;
  val.lr = cfg.value_lr;
  st.value_opt = ParamOptimizer(val);
  if (cfg.advantage.estimator == Estimator::kPpo) st.value = value_from_policy(init);

  if (cfg.prm_mode == PrmMode::kOffline) {
    // Train the PRM on rollouts of the initial policy only, then freeze it.
    const TrainOptions serial;
    for (int s = 0; s < cfg.offline_pretrain_steps; ++s) {
      const auto prompts = generate_batch(
          cfg.task, static_cast<std::size_t>(cfg.batch_prompts),
          derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::kOfflinePrm), static_cast<std::uint64_t>(s)}));
      auto groups = sample_groups(init, prompts, cfg, Stream::kOfflinePrm, s, serial);
      if (cfg.filter) groups = filter_prompts(std::move(groups), cfg.filter_lo, cfg.filter_hi).kept;
      if (!groups.empty()) prm_update(st.prm, groups, cfg.prm_loss);
    }
  }
  return st;
}

MetricsRow train_step(TrainState& state, const RunConfig& cfg, const TrainOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t step = state.step + 1;
  MetricsRow row;
  row.step = step;

  const auto prompts = generate_batch(
      cfg.task, static_cast<std::size_t>(cfg.batch_prompts),
      derive_seed(state.seed, {static_cast<std::uint64_t>(Stream::kTrainPrompts), static_cast<std::uint64_t>(step)}));
  std::vector<PromptGroup> groups = rollout(state.old_policy, prompts, cfg, step, opt);

  double reward = 0.0, length = 0.0, count = 0.0;
  for (const PromptGroup& g : groups)
    for (const Trajectory& t : g.trajectories) {
      reward += t.reward();
      length += static_cast<double>(t.length());
      count += 1.0;
    }
  row.reward_mean = reward / count;
  row.resp_len = length / count;

  std::vector<PromptGroup> retained;
  if (cfg.filter) {
    FilterResult fr = filter_prompts(std::move(groups), cfg.filter_lo, cfg.filter_hi);
    retained = std::move(fr.kept);
    row.filtered_frac = fr.filtered_fraction;
  } else {
    retained = std::move(groups);
  }

  if (!retained.empty()) {
    if (cfg.advantage.needs_process_rewards()) {
      attach_process_rewards(state.prm, retained);
      if (cfg.prm_mode == PrmMode::kOnline) {
        row.prm_loss = prm_update(state.prm, retained, cfg.prm_loss).mean_loss;
        recompute_double_forward(state.prm, retained, cfg.forward_mode == ForwardMode::kDouble);
      }
      row.prm_acc = pairwise_accuracy(retained);
    }
    const ValueParams* vp = state.value ? &*state.value : nullptr;
    for (PromptGroup& g : retained) {
      TokenAdvantages adv = compute_advantages(g, cfg.advantage, vp);
      for (std::size_t i = 0; i < g.k(); ++i) g.trajectories[i].advantages = std::move(adv[i]);
    }
    if (state.value) value_update(*state.value, state.value_opt, retained, cfg.advantage);
    row.policy_obj = policy_update(state, retained, cfg);
  }

  state.old_policy = clone_params(state.policy);
  state.step = step;
  if (step % cfg.eval_every == 0 || step == 1) {
    state.last_eval = evaluate(state.policy, make_eval_set(cfg), static_cast<std::size_t>(cfg.max_len));
  }
  row.eval_acc = state.last_eval;
  if (!opt.deterministic) {
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return row;
}

std::vector<MetricsRow> run_training(
    TrainState& state, const RunConfig& cfg, const TrainOptions& opt,
    const std::function<void(const MetricsRow&, const TrainState&)>& on_row) {
  std::vector<MetricsRow> rows;
  while (state.step < cfg.steps) {
    rows.push_back(train_step(state, cfg, opt));
    if (on_row) on_row(rows.back(), state);
  }
  return rows;
}

void checkpoint_save(const TrainState& state, const RunConfig& cfg,
                     const std::filesystem::path& path) {
  Container c;
  c.dims = state.policy.dims;
  c.vocab = task_vocab().symbols();
  c.put_text("kind", "train_state");
  c.put_text("config", render_config(cfg));
  c.put_int("train.step", state.step);
  c.put_int("train.seed", static_cast<std::int64_t>(state.seed));
  c.put_real("train.last_eval", state.last_eval);
  put_params(c, "policy", state.policy);
  put_params(c, "old_policy", state.old_policy);
  put_optimizer(c, "opt.policy", state.policy_opt);
  put_prm(c, "prm", state.prm);
  c.put_text("prm.loss_kind", to_string(cfg.prm_loss));
  c.put_int("value.present", state.value ? 1 : 0);
  if (state.value) {
    put_params(c, "value", *state.value);
    put_optimizer(c, "opt.value", state.value_opt);
  }
  c.save(path);
}

TrainState checkpoint_load(const std::filesystem::path& path, RunConfig* cfg_out) {
  const Container c = Container::load(path);
  if (!c.has("kind") || c.text("kind") != "train_state")
    throw LoadError(path.string() + " is not a training checkpoint");
  TrainState st;
  st.step = c.integer("train.step");
  st.seed = static_cast<std::uint64_t>(c.integer("train.seed"));
  st.last_eval = c.real("train.last_eval");
  st.policy = ModelParams{get_params(c, "policy")};
  st.old_policy = ModelParams{get_params(c, "old_policy")};
  st.policy_opt = get_optimizer(c, "opt.policy");
  st.prm = get_prm(c, "prm");
  if (c.integer("value.present") != 0) {
    st.value = ValueParams{get_params(c, "value")};
    st.value_opt = get_optimizer(c, "opt.value");
  }
  if (cfg_out) {
    try {
      *cfg_out = parse_config_text(c.text("config"), path.string() + "#config");
    } catch (const ConfigError& e) {
      throw LoadError(e.what());
    }
  }
  return st;
}

}  // namespace prime
