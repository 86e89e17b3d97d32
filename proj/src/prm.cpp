#include "prime/prm.hpp"

#include <cmath>

#include "prime/errors.hpp"

namespace prime {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<SequenceRef> collect_refs(std::span<const PromptGroup> groups) {
  std::vector<SequenceRef> refs;
  for (const PromptGroup& g : groups)
    for (std::size_t i = 0; i < g.k(); ++i) refs.push_back(g.ref(i));
  return refs;
}

void fill_reference(const PrmState& state, std::span<PromptGroup> groups) {
  if (state.ref_mode == RefMode::kPolicyOld) {
    for (PromptGroup& g : groups)
      for (Trajectory& t : g.trajectories) {
        require(t.old_logprobs.size() == t.response.size(),
                "policy-old reference needs old log-probs for every token");
        t.ref_logprobs = t.old_logprobs;
      }
    return;
  }
  require(state.reference.has_value(), "frozen-initial mode requires reference params");
  // The reference is frozen, so cached log-probs stay valid for the whole run.
  std::vector<SequenceRef> refs;
  std::vector<Trajectory*> missing;
  for (PromptGroup& g : groups)
    for (std::size_t i = 0; i < g.k(); ++i)
      if (g.trajectories[i].ref_logprobs.empty()) {
        refs.push_back(g.ref(i));
        missing.push_back(&g.trajectories[i]);
      }
  if (refs.empty()) return;
  auto lps = batch_logprobs(*state.reference, refs);
  for (std::size_t i = 0; i < missing.size(); ++i) missing[i]->ref_logprobs = std::move(lps[i]);
}

}  // namespace

std::string to_string(RefMode m) {
  return m == RefMode::kFrozenInitial ? "frozen_initial" : "policy_old";
}

std::string to_string(PrmLoss l) { return l == PrmLoss::kCe ? "ce" : "dpo"; }

RefMode parse_ref_mode(const std::string& s) {
  if (s == "frozen_initial") return RefMode::kFrozenInitial;
  if (s == "policy_old") return RefMode::kPolicyOld;
  throw ConfigError("unknown ref mode '" + s + "' (frozen_initial | policy_old)");
}

PrmLoss parse_prm_loss(const std::string& s) {
  if (s == "ce") return PrmLoss::kCe;
  if (s == "dpo") return PrmLoss::kDpo;
  throw ConfigError("unknown PRM loss '" + s + "' (ce | dpo)");
}

PrmState make_prm_state(const ModelParams& init, RefMode mode, double beta,
                        const AdamConfig& opt) {
  require(beta > 0.0, "PRM beta must be > 0");
  PrmState s;
  s.params = clone_params(init);
  s.ref_mode = mode;
  if (mode == RefMode::kFrozenInitial) s.reference = clone_params(init);
  s.beta = beta;
  s.optimizer = ParamOptimizer(opt);
  return s;
}

ProcessRewards process_rewards_from_logprobs(std::span<const double> phi,
                                             std::span<const double> ref, double beta) {
  require(phi.size() == ref.size(), "PRM and reference log-prob lengths differ (" +
                                        std::to_string(phi.size()) + " vs " +
                                        std::to_string(ref.size()) + ")");
  ProcessRewards pr;
  pr.token.resize(phi.size());
  pr.q.resize(phi.size());
  pr.values.assign(phi.size() + 1, 0.0);
  double acc = 0.0;
  for (std::size_t t = 0; t < phi.size(); ++t) {
    pr.token[t] = beta * (phi[t] - ref[t]);
    acc += pr.token[t];
    pr.q[t] = acc;
    pr.values[t + 1] = acc;
  }
  pr.sequence = acc;
  return pr;
}

ProcessRewards token_process_rewards(const PrmState& state, const PromptInstance& inst,
                                     const Trajectory& traj) {
  const std::vector<double> phi = sequence_logprobs(state.params, inst.prompt, traj.response);
  if (state.ref_mode == RefMode::kPolicyOld) {
    return process_rewards_from_logprobs(phi, traj.old_logprobs, state.beta);
  }
  require(state.reference.has_value(), "frozen-initial mode requires reference params");
  const std::vector<double> ref =
      traj.ref_logprobs.empty() ? sequence_logprobs(*state.reference, inst.prompt, traj.response)
                                : traj.ref_logprobs;
  return process_rewards_from_logprobs(phi, ref, state.beta);
}

void attach_process_rewards(const PrmState& state, std::span<PromptGroup> groups) {
  fill_reference(state, groups);
  const std::vector<SequenceRef> refs = collect_refs(groups);
  if (refs.empty()) return;
  const auto phi = batch_logprobs(state.params, refs);
  std::size_t idx = 0;
  for (PromptGroup& g : groups)
    for (Trajectory& t : g.trajectories)
      t.process = process_rewards_from_logprobs(phi[idx++], t.ref_logprobs, state.beta);
}

LossGrad ce_loss_and_grad(double r, double label) {
  require(label >= 0.0 && label <= 1.0, "CE label must lie in [0, 1]");
  // -[l log s(r) + (1-l) log(1 - s(r))] with log s(r) = -softplus(-r)
  return {label * softplus(-r) + (1.0 - label) * softplus(r), sigmoid(r) - label};
}

PairLossGrad dpo_loss_and_grad(double r_chosen, double r_rejected) {
  const double delta = r_chosen - r_rejected;
  const double s = sigmoid(-delta);
  return {softplus(-delta), -s, s};
}

std::vector<std::pair<std::size_t, std::size_t>> dpo_pairs(const PromptGroup& group) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < group.k(); ++i) {
    if (!group.trajectories[i].correct()) continue;
    for (std::size_t j = 0; j < group.k(); ++j)
      if (!group.trajectories[j].correct()) pairs.emplace_back(i, j);
  }
  return pairs;
}

PrmUpdateResult prm_update(PrmState& state, std::span<PromptGroup> groups, PrmLoss loss) {
  fill_reference(state, groups);
  std::vector<const Trajectory*> trajs;
  for (const PromptGroup& g : groups)
    for (const Trajectory& t : g.trajectories) trajs.push_back(&t);
  if (trajs.empty()) return {};

  const std::vector<SequenceRef> refs = collect_refs(groups);
  const TokenBatch batch = make_logprob_batch(refs, state.params.dims.context);
  Tape tape;
  const BoundParams bound = bind(tape, state.params);
  const NodeId logp = build_token_logprobs(tape, bound, batch);
  const Tensor& lp = tape.value(logp);

  std::vector<double> r(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    double s = 0.0;
    for (std::size_t row = batch.offsets[i]; row < batch.offsets[i + 1]; ++row)
      s += lp[row] - trajs[i]->ref_logprobs[row - batch.offsets[i]];
    r[i] = state.beta * s;
  }

  // dLoss/dr per trajectory, already divided by the item count.
  std::vector<double> dr(trajs.size(), 0.0);
  PrmUpdateResult result;
  double total = 0.0;
  if (loss == PrmLoss::kCe) {
    result.items = trajs.size();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      const LossGrad lg = ce_loss_and_grad(r[i], trajs[i]->reward());
      total += lg.loss;
      dr[i] = lg.grad / static_cast<double>(result.items);
    }
  } else {
    std::size_t base = 0;
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (const PromptGroup& g : groups) {
      for (auto [c, w] : dpo_pairs(g)) all.emplace_back(base + c, base + w);
      base += g.k();
    }
    result.items = all.size();
    for (auto [c, w] : all) {
      const PairLossGrad pg = dpo_loss_and_grad(r[c], r[w]);
      total += pg.loss;
      dr[c] += pg.grad_chosen / static_cast<double>(result.items);
      dr[w] += pg.grad_rejected / static_cast<double>(result.items);
    }
  }
  if (result.items == 0) return result;
  result.mean_loss = total / static_cast<double>(result.items);

  // Surrogate w . logp has the same parameter gradient as the loss.
  Tensor weights({1, batch.rows()});
  for (std::size_t i = 0; i < trajs.size(); ++i)
    for (std::size_t row = batch.offsets[i]; row < batch.offsets[i + 1]; ++row)
      weights[row] = state.beta * dr[i];
  const NodeId w = tape.leaf(std::move(weights));
  const NodeId surrogate = tape.matmul(w, logp);
  state.optimizer.step(state.params, collect_grads(backward(tape, surrogate), bound));
  return result;
}

std::optional<double> pairwise_accuracy(std::span<const PromptGroup> groups) {
  double score = 0.0;
  std::size_t pairs = 0;
  for (const PromptGroup& g : groups) {
    for (auto [c, w] : dpo_pairs(g)) {
      const auto& pc = g.trajectories[c].process;
      const auto& pw = g.trajectories[w].process;
      require(pc.has_value() && pw.has_value(), "pairwise accuracy needs process rewards");
      if (pc->sequence > pw->sequence) {
        score += 1.0;
      } else if (pc->sequence == pw->sequence) {
        score += 0.5;
      }
      ++pairs;
    }
  }
  if (pairs == 0) return std::nullopt;
  return score / static_cast<double>(pairs);
}

std::optional<double> prm_pairwise_accuracy(const PrmState& state,
                                            std::span<const PromptGroup> groups) {
  std::vector<PromptGroup> scored(groups.begin(), groups.end());
  attach_process_rewards(state, scored);
  return pairwise_accuracy(scored);
}

void recompute_double_forward(const PrmState& state, std::span<PromptGroup> groups,
                              bool enabled) {
  if (enabled) attach_process_rewards(state, groups);
}

void put_prm(Container& c, const std::string& prefix, const PrmState& state) {
  put_params(c, prefix + ".params", state.params);
  if (state.reference) put_params(c, prefix + ".reference", *state.reference);
  c.put_real(prefix + ".beta", state.beta);
  c.put_text(prefix + ".ref_mode", to_string(state.ref_mode));
  put_optimizer(c, prefix + ".opt", state.optimizer);
}

PrmState get_prm(const Container& c, const std::string& prefix) {
  PrmState s;
  s.params = ModelParams{get_params(c, prefix + ".params")};
  try {
    s.ref_mode = parse_ref_mode(c.text(prefix + ".ref_mode"));
  } catch (const ConfigError& e) {
    throw LoadError(e.what());
  }
  if (s.ref_mode == RefMode::kFrozenInitial) {
    s.reference = ModelParams{get_params(c, prefix + ".reference")};
  }
  s.beta = c.real(prefix + ".beta");
  if (!(s.beta > 0.0)) throw LoadError("PRM checkpoint has non-positive beta");
  s.optimizer = get_optimizer(c, prefix + ".opt");
  return s;
}

void save_prm(const std::filesystem::path& path, const PrmState& state, PrmLoss loss,
              const Vocab& vocab) {
  Container c;
  c.dims = state.params.dims;
  c.vocab = vocab.symbols();
  put_params(c, "model", state.params);
  put_prm(c, "prm", state);
  c.put_text("prm.loss_kind", to_string(loss));
  c.save(path);
}

PrmState load_prm(const std::filesystem::path& path, PrmLoss* loss_out) {
  const Container c = Container::load(path);
  PrmState s = get_prm(c, "prm");
  if (loss_out) {
    try {
      *loss_out = parse_prm_loss(c.text("prm.loss_kind"));
    } catch (const ConfigError& e) {
      throw LoadError(e.what());
    }
  }
  return s;
}

}  // namespace prime
