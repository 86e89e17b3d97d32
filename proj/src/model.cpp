#include "prime/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prime/errors.hpp"

namespace prime {
namespace {

constexpr double kInitScale = 0.05;

MlpParams make_mlp(const Dims& dims, std::size_t vocab, std::size_t outputs) {
  require(dims.context > 0 && dims.embed > 0 && dims.hidden > 0 && vocab > 0,
          "model dims must be positive");
  MlpParams p;
  p.dims = dims;
  p.vocab = vocab;
  p.embed = Tensor({vocab, dims.embed});
  p.w_hidden = Tensor({dims.context * dims.embed, dims.hidden});
  p.b_hidden = Tensor({dims.hidden});
  p.w_out = Tensor({dims.hidden, outputs});
  p.b_out = Tensor({outputs});
  return p;
}

void randomize(MlpParams& p, std::uint64_t seed) {
  Rng rng(seed);
  for (Tensor* t : {&p.embed, &p.w_hidden, &p.w_out}) {
    for (double& v : t->values()) v = rng.uniform(-kInitScale, kInitScale);
  }
}

void append_context(std::vector<Token>& out, std::span<const Token> prompt,
                    std::span<const Token> response, std::size_t t, std::size_t k) {
  // Position t sees prompt ++ response[0..t), last k tokens.
  const std::size_t total = prompt.size() + t;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t back = k - i;  // distance from the end
    if (back > total) {
      out.push_back(kPad);
      continue;
    }
    const std::size_t pos = total - back;
    out.push_back(pos < prompt.size() ? prompt[pos] : response[pos - prompt.size()]);
  }
}

// Hidden + output layer for one context, same accumulation order as the tape.
std::vector<double> forward_one(const MlpParams& p, std::span<const Token> ctx) {
  const std::size_t d = p.dims.embed, h = p.dims.hidden, m = p.outputs();
  std::vector<double> x(p.dims.context * d);
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    require(ctx[i] < p.vocab, "token id " + std::to_string(ctx[i]) + " out of range");
    std::copy_n(p.embed.data().data() + ctx[i] * d, d, x.data() + i * d);
  }
  std::vector<double> hid(h, 0.0);
  const double* wh = p.w_hidden.data().data();
  for (std::size_t q = 0; q < x.size(); ++q) {
    const double xv = x[q];
    if (xv == 0.0) continue;
    for (std::size_t j = 0; j < h; ++j) hid[j] += xv * wh[q * h + j];
  }
  for (std::size_t j = 0; j < h; ++j) hid[j] = std::tanh(hid[j] + p.b_hidden[j]);
  std::vector<double> out(m, 0.0);
  const double* wo = p.w_out.data().data();
  for (std::size_t q = 0; q < h; ++q) {
    const double hv = hid[q];
    if (hv == 0.0) continue;
    for (std::size_t j = 0; j < m; ++j) out[j] += hv * wo[q * m + j];
  }
  for (std::size_t j = 0; j < m; ++j) out[j] += p.b_out[j];
  return out;
}

std::vector<Token> padded(const MlpParams& p, std::span<const Token> context) {
  const std::size_t k = p.dims.context;
  require(context.size() <= k, "context longer than the model window");
  std::vector<Token> ctx(k - context.size(), kPad);
  ctx.insert(ctx.end(), context.begin(), context.end());
  return ctx;
}

std::vector<double> log_softmax(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

std::vector<std::vector<double>> split(const Tensor& col, const TokenBatch& b) {
  std::vector<std::vector<double>> out(b.offsets.size() - 1);
  for (std::size_t s = 0; s + 1 < b.offsets.size(); ++s) {
    out[s].assign(col.data().begin() + static_cast<std::ptrdiff_t>(b.offsets[s]),
                  col.data().begin() + static_cast<std::ptrdiff_t>(b.offsets[s + 1]));
  }
  return out;
}

}  // namespace

void MlpParams::validate() const {
  const std::size_t out = outputs();
  require(embed.shape() == std::vector<std::size_t>{vocab, dims.embed} &&
              w_hidden.shape() ==
                  std::vector<std::size_t>{dims.context * dims.embed, dims.hidden} &&
              b_hidden.shape() == std::vector<std::size_t>{dims.hidden} &&
              w_out.shape() == std::vector<std::size_t>{dims.hidden, out},
          "model parameter shapes are inconsistent with dims");
  for (const Tensor* t : tensors()) require(t->all_finite(), "model parameters not finite");
}

ModelParams init_params(std::uint64_t seed, const Dims& dims, std::size_t vocab) {
  ModelParams p{make_mlp(dims, vocab, vocab)};
  randomize(p, seed);
  return p;
}

ModelParams zero_params(const Dims& dims, std::size_t vocab) {
  return ModelParams{make_mlp(dims, vocab, vocab)};
}

ValueParams init_value_params(std::uint64_t seed, const Dims& dims, std::size_t vocab) {
  ValueParams p{make_mlp(dims, vocab, 1)};
  randomize(p, seed);
  return p;
}

ValueParams zero_value_params(const Dims& dims, std::size_t vocab) {
  return ValueParams{make_mlp(dims, vocab, 1)};
}

std::vector<Token> context_window(std::span<const Token> prompt,
                                  std::span<const Token> response, std::size_t t,
                                  std::size_t k) {
  require(t <= response.size(), "context position past end of response");
  std::vector<Token> out;
  out.reserve(k);
  append_context(out, prompt, response, t, k);
  return out;
}

Tensor forward_logits(const ModelParams& params, std::span<const Token> context) {
  return Tensor::vector(forward_one(params, padded(params, context)));
}

std::vector<double> sequence_logprobs(const ModelParams& params,
                                      std::span<const Token> prompt,
                                      std::span<const Token> response) {
  require(!response.empty(), "sequence_logprobs: empty response");
  require(!prompt.empty(), "sequence_logprobs: empty prompt");
  const SequenceRef ref{prompt, response};
  return batch_logprobs(params, std::span(&ref, 1)).front();
}

void SamplerCfg::validate() const {
  require(temperature >= 0.0 && std::isfinite(temperature), "sampler temperature must be >= 0");
  require(max_len >= 1 && max_len <= 256, "sampler max_len must lie in [1, 256]");
}

Sample sample_response(const ModelParams& params, std::span<const Token> prompt,
                       const SamplerCfg& cfg, Rng& rng) {
  cfg.validate();
  Sample s;
  const std::size_t k = params.dims.context;
  std::vector<Token> ctx;
  ctx.reserve(k);
  while (s.tokens.size() < cfg.max_len) {
    ctx.clear();
    append_context(ctx, prompt, s.tokens, s.tokens.size(), k);
    const std::vector<double> lp = log_softmax(forward_one(params, ctx));
    Token next = 0;
    if (cfg.temperature == 0.0) {
      next = static_cast<Token>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      std::vector<double> w(lp.size());
      const double mx = *std::max_element(lp.begin(), lp.end());
      double total = 0.0;
      for (std::size_t i = 0; i < lp.size(); ++i) {
        w[i] = std::exp((lp[i] - mx) / cfg.temperature);
        total += w[i];
      }
      double u = rng.uniform() * total;
      next = lp.size() - 1;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (u < w[i]) {
          next = i;
          break;
        }
        u -= w[i];
      }
    }
    s.tokens.push_back(next);
    s.logprobs.push_back(lp[next]);
    if (next == kEos) return s;
  }
  s.truncated = true;
  return s;
}

std::vector<double> value_predict(const ValueParams& vparams, std::span<const Token> prompt,
                                  std::span<const Token> response) {
  const SequenceRef ref{prompt, response};
  return batch_values(vparams, std::span(&ref, 1)).front();
}

TokenBatch make_logprob_batch(std::span<const SequenceRef> seqs, std::size_t k) {
  TokenBatch b;
  b.k = k;
  b.offsets.push_back(0);
  for (const SequenceRef& s : seqs) {
    for (std::size_t t = 0; t < s.response.size(); ++t) {
      append_context(b.contexts, s.prompt, s.response, t, k);
      b.targets.push_back(s.response[t]);
    }
    b.offsets.push_back(b.targets.size());
  }
  return b;
}

TokenBatch make_value_batch(std::span<const SequenceRef> seqs, std::size_t k) {
  TokenBatch b;
  b.k = k;
  b.offsets.push_back(0);
  for (const SequenceRef& s : seqs) {
    for (std::size_t t = 0; t <= s.response.size(); ++t) {
      append_context(b.contexts, s.prompt, s.response, t, k);
    }
    b.offsets.push_back(b.contexts.size() / k);
  }
  return b;
}

BoundParams bind(Tape& tape, const MlpParams& params) {
  BoundParams b;
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < kParamTensors; ++i) b.ids[i] = tape.leaf(*ts[i]);
  return b;
}

NodeId build_outputs(Tape& tape, const BoundParams& p, const TokenBatch& batch) {
  const NodeId x = tape.gather_rows(p.ids[0], batch.contexts, batch.k);
  const NodeId pre = tape.add_bias(tape.matmul(x, p.ids[1]), p.ids[2]);
  return tape.add_bias(tape.matmul(tape.tanh(pre), p.ids[3]), p.ids[4]);
}

NodeId build_token_logprobs(Tape& tape, const BoundParams& p, const TokenBatch& batch) {
  return tape.gather_cols(tape.log_softmax(build_outputs(tape, p, batch)), batch.targets);
}

ParamGrads collect_grads(const Gradients& g, const BoundParams& p) {
  ParamGrads out;
  for (std::size_t i = 0; i < kParamTensors; ++i) out[i] = g[p.ids[i]];
  return out;
}

std::vector<std::vector<double>> batch_logprobs(const ModelParams& params,
                                                std::span<const SequenceRef> seqs) {
  const TokenBatch batch = make_logprob_batch(seqs, params.dims.context);
  if (batch.rows() == 0) return std::vector<std::vector<double>>(seqs.size());
  Tape tape;
  const NodeId lp = build_token_logprobs(tape, bind(tape, params), batch);
  return split(tape.value(lp), batch);
}

std::vector<std::vector<double>> batch_values(const ValueParams& params,
                                              std::span<const SequenceRef> seqs) {
  const TokenBatch batch = make_value_batch(seqs, params.dims.context);
  Tape tape;
  const NodeId v = build_outputs(tape, bind(tape, params), batch);
  return split(tape.value(v), batch);
}

ParamOptimizer::ParamOptimizer(const AdamConfig& cfg) {
  for (AdamState& s : states_) s.cfg = cfg;
}

void ParamOptimizer::step(MlpParams& params, const ParamGrads& grads) {
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < kParamTensors; ++i) adam_step(*ts[i], grads[i], states_[i]);
}

}  // namespace prime
