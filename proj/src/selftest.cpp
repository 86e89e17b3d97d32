#include "prime/selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "prime/errors.hpp"
#include "prime/model.hpp"
#include "prime/prm.hpp"
#include "prime/trainer.hpp"

namespace prime {
namespace {

constexpr double kGradTol = 1e-4;

using Clock = std::chrono::steady_clock;

CheckResult timed(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  const auto t0 = Clock::now();
  CheckResult r;
  r.name = name;
  try {
    auto [ok, detail] = body();
    r.passed = ok;
    r.detail = detail;
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

std::pair<bool, std::string> below(double err, double tol) {
  return {err < tol, "max err " + sci(err) + " (tol " + sci(tol) + ")"};
}

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

double max_diff(const TokenAdvantages& a, const TokenAdvantages& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return INFINITY;
    for (std::size_t t = 0; t < a[i].size(); ++t) m = std::max(m, std::abs(a[i][t] - b[i][t]));
  }
  return m;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  return max_diff(TokenAdvantages{a}, TokenAdvantages{b});
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---- gradient checks -------------------------------------------------------

double primitive_grad_error(Rng& rng) {
  double worst = 0.0;
  const Tensor x = random_tensor(rng, {3, 4});
  const Tensor w = random_tensor(rng, {4, 5});
  const Tensor bias = random_tensor(rng, {5});
  const Tensor mix = random_tensor(rng, {1, 3});
  const std::vector<std::size_t> ids = {2, 0, 1, 2};
  const std::vector<std::size_t> cols = {4, 0, 3};
  auto head = [&](Tape& tape, NodeId h) {
    // tanh -> log_softmax -> gather_cols -> weighted sum
    const NodeId ls = tape.log_softmax(tape.tanh(h));
    const NodeId picked = tape.gather_cols(ls, cols);
    return tape.scale(tape.sum(tape.matmul(tape.leaf(mix), picked)), 0.7);
  };
  // d/dx through matmul, add_bias, and the head.
  worst = std::max(worst, grad_check([&](Tape& tape, NodeId p) {
    return head(tape, tape.add_bias(tape.matmul(p, tape.leaf(w)), tape.leaf(bias)));
  }, x, 1e-6));
  // d/dw
  worst = std::max(worst, grad_check([&](Tape& tape, NodeId p) {
    return head(tape, tape.add_bias(tape.matmul(tape.leaf(x), p), tape.leaf(bias)));
  }, w, 1e-6));
  // d/dbias and add
  worst = std::max(worst, grad_check([&](Tape& tape, NodeId p) {
    const NodeId xw = tape.matmul(tape.leaf(x), tape.leaf(w));
    return head(tape, tape.add(xw, tape.add_bias(xw, p)));
  }, bias, 1e-6));
  // gather_rows: an embedding lookup of 2 rows per output row.
  const Tensor table = random_tensor(rng, {3, 2});
  const Tensor proj = random_tensor(rng, {4, 5});
  worst = std::max(worst, grad_check([&](Tape& tape, NodeId p) {
    const NodeId e = tape.gather_rows(p, {2, 0, 1, 1, 0, 2}, 2);  // 3 x 4
    return head(tape, tape.matmul(e, tape.leaf(proj)));
  }, table, 1e-6));
  return worst;
}

double model_grad_error(Rng& rng) {
  Dims dims{4, 3, 5};
  const std::size_t vocab = 7;
  ModelParams params = init_params(rng.below(1u << 30), dims, vocab);
  for (Tensor* t : params.tensors())
    for (double& v : t->data()) v = rng.uniform(-0.5, 0.5);
  const std::vector<Token> prompt = {3, 4, 5};
  const std::vector<Token> r1 = {6, 3, kEos};
  const std::vector<Token> r2 = {4, 4, 5, 6, 3, 6};
  const std::vector<SequenceRef> refs = {{prompt, r1}, {prompt, r2}};
  const TokenBatch batch = make_logprob_batch(refs, dims.context);
  const Tensor weights = random_tensor(rng, {1, batch.rows()});

  Tape tape;
  const BoundParams bound = bind(tape, params);
  const NodeId loss = tape.matmul(tape.leaf(weights), build_token_logprobs(tape, bound, batch));
  const ParamGrads grads = collect_grads(backward(tape, loss), bound);

  double worst = 0.0;
  for (std::size_t p = 0; p < kParamTensors; ++p) {
    auto f = [&](const Tensor& value) {
      ModelParams probe = params;
      *probe.tensors()[p] = value;
      const auto lps = batch_logprobs(probe, refs);  // non-tape forward
      double s = 0.0;
      std::size_t row = 0;
      for (const auto& seq : lps)
        for (double lp : seq) s += weights[row++] * lp;
      return s;
    };
    worst = std::max(worst, grad_check(f, grads[p], *params.tensors()[p], 1e-6));
  }
  return worst;
}

double loss_grad_error(Rng& rng) {
  double worst = 0.0;
  const double h = 1e-6;
  for (int i = 0; i < 50; ++i) {
    const double r = rng.uniform(-4.0, 4.0), l = rng.uniform(0.0, 1.0);
    const double fd = (ce_loss_and_grad(r + h, l).loss - ce_loss_and_grad(r - h, l).loss) / (2 * h);
    worst = std::max(worst, std::abs(fd - ce_loss_and_grad(r, l).grad));
    const double a = rng.uniform(-4.0, 4.0), b = rng.uniform(-4.0, 4.0);
    const PairLossGrad pg = dpo_loss_and_grad(a, b);
    const double fa = (dpo_loss_and_grad(a + h, b).loss - dpo_loss_and_grad(a - h, b).loss) / (2 * h);
    const double fb = (dpo_loss_and_grad(a, b + h).loss - dpo_loss_and_grad(a, b - h).loss) / (2 * h);
    worst = std::max({worst, std::abs(fa - pg.grad_chosen), std::abs(fb - pg.grad_rejected)});
  }
  // Clip objective away from its kinks.
  std::vector<double> nw, old, adv;
  for (int t = 0; t < 20; ++t) {
    old.push_back(rng.uniform(-2.0, 0.0));
    nw.push_back(old.back() + rng.uniform(-0.4, 0.4));
    adv.push_back(rng.uniform(-1.0, 1.0));
  }
  const ClipResult base = ppo_clip_objective(nw, old, adv, 0.2);
  for (std::size_t t = 0; t < nw.size(); ++t) {
    const double rho = std::exp(nw[t] - old[t]);
    if (std::abs(rho - 0.8) < 1e-3 || std::abs(rho - 1.2) < 1e-3) continue;
    auto probe = nw;
    probe[t] += h;
    const double up = ppo_clip_objective(probe, old, adv, 0.2).objective;
    probe[t] -= 2 * h;
    const double down = ppo_clip_objective(probe, old, adv, 0.2).objective;
    worst = std::max(worst, std::abs((up - down) / (2 * h) - base.grad[t]));
  }
  // Value MSE.
  std::vector<std::vector<double>> values = {{0.1, -0.3, 0.5}, {0.2, 0.0}};
  const std::vector<std::vector<double>> rewards = {{0.0, 1.0}, {-0.5}};
  const ValueFit fit = value_loss(values, rewards, 0.9);
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t t = 0; t < rewards[i].size(); ++t) {
      auto up = values, down = values;
      up[i][t] += h;
      down[i][t] -= h;
      const double fd = (value_loss(up, rewards, 0.9).mse - value_loss(down, rewards, 0.9).mse) / (2 * h);
      worst = std::max(worst, std::abs(fd - fit.grad[i][t]));
    }
  return worst;
}

// ---- group fixtures --------------------------------------------------------

ModelParams random_model(Rng& rng, double scale) {
  ModelParams p = init_params(rng.below(1u << 30), Dims{4, 4, 6}, task_vocab().size());
  for (Tensor* t : p.tensors())
    for (double& v : t->data()) v = rng.uniform(-scale, scale);
  return p;
}

std::vector<Token> random_tokens(Rng& rng, std::size_t n) {
  std::vector<Token> out(n);
  for (Token& t : out) t = static_cast<Token>(3 + rng.below(task_vocab().size() - 3));
  return out;
}

}  // namespace

PromptGroup random_group(Rng& rng, std::size_t max_k, std::size_t max_len) {
  require(max_k >= 2 && max_len >= 1, "random_group needs max_k >= 2 and max_len >= 1");
  PromptGroup g;
  g.instance.kind = TaskKind::kAddChain;
  g.instance.prompt = random_tokens(rng, 3 + rng.below(3));
  const std::size_t k = 2 + rng.below(max_k - 1);
  for (std::size_t i = 0; i < k; ++i) {
    Trajectory t;
    t.response = random_tokens(rng, 1 + rng.below(max_len));
    t.outcome.reward = rng.uniform(-1.0, 1.0);
    ProcessRewards pr;
    pr.values.push_back(0.0);
    for (std::size_t s = 0; s < t.response.size(); ++s) {
      pr.token.push_back(rng.uniform(-1.0, 1.0));
      pr.sequence += pr.token.back();
      pr.q.push_back(pr.sequence);
      pr.values.push_back(pr.sequence);
    }
    t.process = pr;
    g.trajectories.push_back(std::move(t));
  }
  return g;
}

namespace oracle {

std::vector<double> loo_outcome(const PromptGroup& g) {
  const std::size_t k = g.k();
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    double others = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) others += g.trajectories[j].outcome.reward;
    out[i] = g.trajectories[i].outcome.reward - others / static_cast<double>(k - 1);
  }
  return out;
}

TokenAdvantages prime(const PromptGroup& g, double gamma, bool token_mean, bool use_process,
                      bool use_outcome) {
  const std::size_t k = g.k();
  const std::vector<double> outcome = loo_outcome(g);
  TokenAdvantages out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& ti = g.trajectories[i];
    double baseline = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      const auto& tj = g.trajectories[j];
      double total = 0.0;
      for (double r : tj.process->token) total += r;
      baseline += token_mean ? total / static_cast<double>(tj.response.size()) : total;
    }
    baseline /= static_cast<double>(k - 1);
    for (std::size_t t = 0; t < ti.response.size(); ++t) {
      double a = use_outcome ? outcome[i] : 0.0;
      if (use_process) {
        for (std::size_t s = t; s < ti.response.size(); ++s)
          a += std::pow(gamma, static_cast<double>(s - t)) * (ti.process->token[s] - baseline);
      }
      out[i].push_back(a);
    }
  }
  return out;
}

TokenAdvantages grpo(const PromptGroup& g, double gamma, bool use_process, bool use_outcome) {
  const std::size_t k = g.k();
  const double n = static_cast<double>(k);
  double mo = 0.0, mp = 0.0;
  std::vector<double> per_token(k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto& tj = g.trajectories[j];
    mo += tj.outcome.reward / n;
    double total = 0.0;
    for (double r : tj.process->token) total += r;
    per_token[j] = total / static_cast<double>(tj.response.size());
    mp += per_token[j] / n;
  }
  double vo = 0.0, vp = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    vo += (g.trajectories[j].outcome.reward - mo) * (g.trajectories[j].outcome.reward - mo) / n;
    vp += (per_token[j] - mp) * (per_token[j] - mp) / n;
  }
  const double so = std::sqrt(vo), sp = std::sqrt(vp);
  TokenAdvantages out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& ti = g.trajectories[i];
    for (std::size_t t = 0; t < ti.response.size(); ++t) {
      double a = 0.0;
      if (use_outcome && so > 1e-12) a += (ti.outcome.reward - mo) / so;
      if (use_process && sp > 1e-12) {
        for (std::size_t s = t; s < ti.response.size(); ++s)
          a += std::pow(gamma, static_cast<double>(s - t)) * (ti.process->token[s] - mp) / sp;
      }
      out[i].push_back(a);
    }
  }
  return out;
}

TokenAdvantages reinforce(const PromptGroup& g, double gamma, bool use_process, bool use_outcome) {
  TokenAdvantages out(g.k());
  for (std::size_t i = 0; i < g.k(); ++i) {
    const auto& ti = g.trajectories[i];
    for (std::size_t t = 0; t < ti.response.size(); ++t) {
      double a = use_outcome ? ti.outcome.reward : 0.0;
      if (use_process) {
        for (std::size_t s = t; s < ti.response.size(); ++s)
          a += std::pow(gamma, static_cast<double>(s - t)) * ti.process->token[s];
      }
      out[i].push_back(a);
    }
  }
  return out;
}

std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values,
                        double gamma, double lambda) {
  const std::size_t n = rewards.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = (t + 1 == n) ? 0.0 : values[t + 1];
    delta[t] = rewards[t] + gamma * next - values[t];
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t l = 0; t + l < n; ++l)
      out[t] += std::pow(gamma * lambda, static_cast<double>(l)) * delta[t + l];
  return out;
}

TokenAdvantages prm_value(const PromptGroup& g) {
  TokenAdvantages out(g.k());
  for (std::size_t i = 0; i < g.k(); ++i) {
    const auto& ti = g.trajectories[i];
    for (std::size_t t = 0; t < ti.response.size(); ++t) {
      double v = 0.0;
      for (std::size_t s = 0; s < t; ++s) v += ti.process->token[s];
      out[i].push_back(ti.outcome.reward - v);
    }
  }
  return out;
}

}  // namespace oracle

double prime_oracle_error(std::size_t groups, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t n = 0; n < groups; ++n) {
    const PromptGroup g = random_group(rng, 5, 6);
    AdvantageCfg cfg;
    cfg.gamma = rng.uniform() < 0.5 ? 1.0 : rng.uniform(0.5, 1.0);
    cfg.baseline = rng.uniform() < 0.5 ? ProcessBaseline::kTokenMean : ProcessBaseline::kSequenceTotal;
    worst = std::max(worst, max_diff(prime_advantages(g, cfg),
                                     oracle::prime(g, cfg.gamma, cfg.baseline == ProcessBaseline::kTokenMean,
                                                   true, true)));
  }
  return worst;
}

std::vector<CheckResult> run_oracle_suite(std::size_t groups, std::uint64_t seed) {
  constexpr double tol = 1e-10;
  std::vector<CheckResult> out;
  out.push_back(timed("oracle: prime_advantages", [&] {
    return below(prime_oracle_error(groups, seed), tol);
  }));
  out.push_back(timed("oracle: loo_outcome_advantages", [&] {
    Rng rng(seed + 1);
    double worst = 0.0;
    for (std::size_t n = 0; n < groups; ++n) {
      const PromptGroup g = random_group(rng, 5, 6);
      worst = std::max(worst, max_diff(loo_outcome_advantages(g), oracle::loo_outcome(g)));
    }
    return below(worst, tol);
  }));
  out.push_back(timed("oracle: grpo_advantages", [&] {
    Rng rng(seed + 2);
    double worst = 0.0;
    for (std::size_t n = 0; n < groups; ++n) {
      PromptGroup g = random_group(rng, 5, 6);
      if (n % 10 == 0)  // constant outcomes exercise the zero-std branch
        for (auto& t : g.trajectories) t.outcome.reward = 0.5;
      AdvantageCfg cfg;
      cfg.estimator = Estimator::kGrpo;
      cfg.gamma = rng.uniform(0.5, 1.0);
      worst = std::max(worst, max_diff(grpo_advantages(g, cfg), oracle::grpo(g, cfg.gamma, true, true)));
    }
    return below(worst, tol);
  }));
  out.push_back(timed("oracle: reinforce_advantages", [&] {
    Rng rng(seed + 3);
    double worst = 0.0;
    for (std::size_t n = 0; n < groups; ++n) {
      const PromptGroup g = random_group(rng, 5, 6);
      AdvantageCfg cfg;
      cfg.estimator = Estimator::kReinforce;
      cfg.gamma = rng.uniform(0.5, 1.0);
      worst = std::max(worst, max_diff(reinforce_advantages(g, cfg),
                                       oracle::reinforce(g, cfg.gamma, true, true)));
    }
    return below(worst, tol);
  }));
  out.push_back(timed("oracle: gae_advantages", [&] {
    Rng rng(seed + 4);
    const Dims dims{4, 4, 6};
    ValueParams vp = init_value_params(rng.below(1u << 30), dims, task_vocab().size());
    for (Tensor* t : vp.tensors())
      for (double& v : t->data()) v = rng.uniform(-0.5, 0.5);
    double worst = 0.0;
    for (std::size_t n = 0; n < groups; ++n) {
      const PromptGroup g = random_group(rng, 5, 6);
      AdvantageCfg cfg;
      cfg.estimator = Estimator::kPpo;
      cfg.gamma = rng.uniform(0.5, 1.0);
      cfg.lambda = rng.uniform(0.0, 1.0);
      const TokenAdvantages batched = compute_advantages(g, cfg, &vp);
      for (std::size_t i = 0; i < g.k(); ++i) {
        const Trajectory& t = g.trajectories[i];
        std::vector<double> rewards(t.process->token);
        rewards.back() += t.outcome.reward;
        const auto values = value_predict(vp, g.instance.prompt, t.response);
        const auto expect = oracle::gae(rewards, values, cfg.gamma, cfg.lambda);
        worst = std::max({worst, max_diff(gae_advantages(g.instance, t, vp, cfg), expect),
                          max_diff(batched[i], expect)});
      }
    }
    return below(worst, tol);
  }));
  out.push_back(timed("oracle: prm_value_advantages", [&] {
    Rng rng(seed + 5);
    double worst = 0.0;
    for (std::size_t n = 0; n < groups; ++n) {
      const PromptGroup g = random_group(rng, 5, 6);
      worst = std::max(worst, max_diff(prm_value_advantages(g), oracle::prm_value(g)));
    }
    return below(worst, tol);
  }));
  return out;
}

std::vector<CheckResult> run_invariant_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(timed("gradient: tape primitives", [&] {
    Rng rng(seed);
    return below(primitive_grad_error(rng), kGradTol);
  }));
  out.push_back(timed("gradient: model log-probs vs finite differences", [&] {
    Rng rng(seed + 1);
    return below(model_grad_error(rng), kGradTol);
  }));
  out.push_back(timed("gradient: CE, DPO, clip and value losses", [&] {
    Rng rng(seed + 2);
    return below(loss_grad_error(rng), kGradTol);
  }));
  out.push_back(timed("telescoping: sum r_t = r(y), v diffs = r_t", [&] {
    Rng rng(seed + 3);
    const ModelParams phi = random_model(rng, 0.5), ref = random_model(rng, 0.5);
    double worst = 0.0;
    for (int n = 0; n < 50; ++n) {
      const auto prompt = random_tokens(rng, 4);
      const auto resp = random_tokens(rng, 1 + rng.below(6));
      const auto lp_phi = sequence_logprobs(phi, prompt, resp);
      const auto lp_ref = sequence_logprobs(ref, prompt, resp);
      const ProcessRewards pr = process_rewards_from_logprobs(lp_phi, lp_ref, 0.05);
      double sum = 0.0, total_phi = 0.0, total_ref = 0.0;
      for (std::size_t t = 0; t < pr.token.size(); ++t) {
        sum += pr.token[t];
        total_phi += lp_phi[t];
        total_ref += lp_ref[t];
        worst = std::max(worst, std::abs(pr.values[t + 1] - pr.values[t] - pr.token[t]));
      }
      worst = std::max({worst, std::abs(sum - pr.sequence),
                        std::abs(pr.sequence - 0.05 * (total_phi - total_ref))});
    }
    return below(worst, 1e-9);
  }));
  out.push_back(timed("zero rewards when PRM = policy clone", [&] {
    Rng rng(seed + 4);
    const ModelParams policy = random_model(rng, 0.5);
    const PrmState st = make_prm_state(policy, RefMode::kFrozenInitial, 0.05, AdamConfig{});
    double worst = 0.0;
    for (int n = 0; n < 20; ++n) {
      PromptInstance inst;
      inst.prompt = random_tokens(rng, 4);
      Trajectory t;
      t.response = random_tokens(rng, 1 + rng.below(6));
      for (double r : token_process_rewards(st, inst, t).token) worst = std::max(worst, std::abs(r));
    }
    return std::pair{worst == 0.0, "max |r| " + sci(worst)};
  }));
  out.push_back(timed("LOO outcome advantages sum to zero", [&] {
    Rng rng(seed + 5);
    double worst = 0.0;
    for (int n = 0; n < 200; ++n) {
      double s = 0.0;
      for (double a : loo_outcome_advantages(random_group(rng, 5, 6))) s += a;
      worst = std::max(worst, std::abs(s));
    }
    return below(worst, 1e-10);
  }));
  out.push_back(timed("GRPO outcome term: mean 0, population std 1", [&] {
    Rng rng(seed + 6);
    double worst = 0.0;
    AdvantageCfg cfg;
    cfg.estimator = Estimator::kGrpo;
    cfg.use_process_rewards = false;
    for (int n = 0; n < 200; ++n) {
      const PromptGroup g = random_group(rng, 5, 6);
      const TokenAdvantages a = grpo_advantages(g, cfg);
      double mean = 0.0, var = 0.0;
      for (const auto& row : a) mean += row[0] / static_cast<double>(a.size());
      for (const auto& row : a) var += (row[0] - mean) * (row[0] - mean) / static_cast<double>(a.size());
      worst = std::max({worst, std::abs(mean), std::abs(std::sqrt(var) - 1.0)});
    }
    return below(worst, 1e-10);
  }));
  out.push_back(timed("CE gradient identity sigma(r) - l", [&] {
    Rng rng(seed + 7);
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
      const double r = rng.uniform(-20.0, 20.0), l = rng.uniform();
      worst = std::max(worst, std::abs(ce_loss_and_grad(r, l).grad - (sigmoid(r) - l)));
    }
    return below(worst, 1e-10);
  }));
  out.push_back(timed("clip objective hand cases", [&] {
    // (rho, A) -> expected objective and gradient with eps = 0.2
    struct Case { double rho, adv, obj, grad; };
    const Case cases[] = {
        {1.0, 1.0, 1.0, 1.0},     // ratio 1: plain policy gradient
        {1.5, 1.0, 1.2, 0.0},     // A > 0 above 1+eps: clipped
        {0.5, 1.0, 0.5, 0.5},     // A > 0 below 1-eps: unclipped
        {0.5, -1.0, -0.8, 0.0},   // A < 0 below 1-eps: clipped
        {1.5, -1.0, -1.5, -1.5},  // A < 0 above 1+eps: unclipped
    };
    double worst = 0.0;
    for (const Case& c : cases) {
      const std::vector<double> nw = {std::log(c.rho)}, old = {0.0}, adv = {c.adv};
      const ClipResult r = ppo_clip_objective(nw, old, adv, 0.2);
      worst = std::max({worst, std::abs(r.objective - c.obj), std::abs(r.grad[0] - c.grad)});
    }
    return below(worst, 1e-12);
  }));
  out.push_back(timed("group-constant PRM bias cancels", [&] {
    Rng rng(seed + 8);
    double worst = 0.0;
    AdvantageCfg cfg;
    for (int n = 0; n < 200; ++n) {
      const PromptGroup g = random_group(rng, 5, 6);
      PromptGroup shifted = g;
      const double c = rng.uniform(-3.0, 3.0);
      // A prompt-only bias shifts every token reward (and the outcome) by c.
      for (Trajectory& t : shifted.trajectories) {
        t.outcome.reward += c;
        double acc = 0.0;
        for (std::size_t s = 0; s < t.process->token.size(); ++s) {
          t.process->token[s] += c;
          acc += t.process->token[s];
          t.process->q[s] = acc;
          t.process->values[s + 1] = acc;
        }
        t.process->sequence = acc;
      }
      worst = std::max(worst, max_diff(prime_advantages(g, cfg), prime_advantages(shifted, cfg)));
      worst = std::max(worst, max_diff(loo_outcome_advantages(g), loo_outcome_advantages(shifted)));
    }
    return below(worst, 1e-10);
  }));
  out.push_back(timed("ratio identity after theta_old refresh", [&] {
    Rng rng(seed + 9);
    const ModelParams policy = random_model(rng, 0.5);
    std::vector<double> lp, adv;
    for (int n = 0; n < 10; ++n) {
      const auto prompt = random_tokens(rng, 4);
      const auto resp = random_tokens(rng, 1 + rng.below(6));
      for (double v : sequence_logprobs(policy, prompt, resp)) {
        lp.push_back(v);
        adv.push_back(rng.uniform(-1.0, 1.0));
      }
    }
    const ClipResult r = ppo_clip_objective(lp, lp, adv, 0.2);
    double worst = 0.0;
    for (std::size_t t = 0; t < lp.size(); ++t)
      worst = std::max(worst, std::abs(r.grad[t] - adv[t] / static_cast<double>(lp.size())));
    return below(worst, 1e-10);
  }));
  return out;
}

std::string format_results(const std::vector<CheckResult>& results) {
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::ostringstream out;
  int failed = 0;
  for (const auto& r : results) {
    char secs[32];
    std::snprintf(secs, sizeof(secs), "%7.3fs", r.seconds);
    out << (r.passed ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ')
        << secs << "  " << r.detail << "\n";
    failed += r.passed ? 0 : 1;
  }
  out << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " checks passed\n";
  return out.str();
}

}  // namespace prime
