#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "prime/adam.hpp"
#include "prime/rng.hpp"
#include "prime/tape.hpp"
#include "prime/tensor.hpp"
#include "prime/vocab.hpp"

namespace prime {

struct Dims {
  std::size_t context = 8;  // k: tokens visible to the model
  std::size_t embed = 16;   // d
  std::size_t hidden = 64;  // h
  bool operator==(const Dims&) const = default;
};

inline constexpr std::size_t kParamTensors = 5;
inline constexpr std::array<const char*, kParamTensors> kParamNames = {
    "embed", "w_hidden", "b_hidden", "w_out", "b_out"};

// Context-window MLP:
//   out = W_out . tanh(W_h . concat(embed[ctx_1..ctx_k]) + b_h) + b_out
struct MlpParams {
  Dims dims;
  std::size_t vocab = 0;
  Tensor embed;     // vocab x d
  Tensor w_hidden;  // (k*d) x h
  Tensor b_hidden;  // h
  Tensor w_out;     // h x outputs
  Tensor b_out;     // outputs

  std::size_t outputs() const { return b_out.size(); }
  std::array<Tensor*, kParamTensors> tensors() {
    return {&embed, &w_hidden, &b_hidden, &w_out, &b_out};
  }
  std::array<const Tensor*, kParamTensors> tensors() const {
    return {&embed, &w_hidden, &b_hidden, &w_out, &b_out};
  }
  // Throws ContractViolation when shapes disagree with dims or values are not finite.
  void validate() const;
  bool operator==(const MlpParams&) const = default;
};

// Language model head: outputs == vocab.
struct ModelParams : MlpParams {};
// Scalar value head: outputs == 1.
struct ValueParams : MlpParams {};

using ParamGrads = std::array<Tensor, kParamTensors>;

// Weights i.i.d. uniform in [-0.05, 0.05] from the seeded stream, biases zero.
ModelParams init_params(std::uint64_t seed, const Dims& dims, std::size_t vocab);
ModelParams zero_params(const Dims& dims, std::size_t vocab);
ValueParams init_value_params(std::uint64_t seed, const Dims& dims, std::size_t vocab);
ValueParams zero_value_params(const Dims& dims, std::size_t vocab);
inline ModelParams clone_params(const ModelParams& p) { return p; }

// The k tokens preceding response position t, left-padded with PAD.
std::vector<Token> context_window(std::span<const Token> prompt,
                                  std::span<const Token> response, std::size_t t,
                                  std::size_t k);

// Logits for the next token; `context` may be shorter than k (left-padded).
Tensor forward_logits(const ModelParams& params, std::span<const Token> context);

// log pi(y_t | x, y_<t) for every response token.
std::vector<double> sequence_logprobs(const ModelParams& params,
                                      std::span<const Token> prompt,
                                      std::span<const Token> response);

struct SamplerCfg {
  double temperature = 1.0;  // 0 selects greedy argmax
  std::size_t max_len = 8;
  std::uint64_t stream = 0;
  void validate() const;
};

struct Sample {
  std::vector<Token> tokens;
  std::vector<double> logprobs;  // under the model itself (temperature 1)
  bool truncated = false;        // hit max_len without emitting EOS
};

Sample sample_response(const ModelParams& params, std::span<const Token> prompt,
                       const SamplerCfg& cfg, Rng& rng);

// v(y_<t) for t = 0..|response|; position 0 sees only the prompt.
std::vector<double> value_predict(const ValueParams& vparams, std::span<const Token> prompt,
                                  std::span<const Token> response);

// ---- batched, differentiable forward ------------------------------------

struct SequenceRef {
  std::span<const Token> prompt;
  std::span<const Token> response;
};

// Flattened contexts of many sequences. For log-prob batches each response
// token is one row with its target; value batches add the final position.
struct TokenBatch {
  std::size_t k = 0;
  std::vector<Token> contexts;       // rows * k
  std::vector<std::size_t> targets;  // empty for value batches
  std::vector<std::size_t> offsets;  // row offset of each sequence, plus end
  std::size_t rows() const { return offsets.empty() ? 0 : offsets.back(); }
};

TokenBatch make_logprob_batch(std::span<const SequenceRef> seqs, std::size_t k);
TokenBatch make_value_batch(std::span<const SequenceRef> seqs, std::size_t k);

struct BoundParams {
  std::array<NodeId, kParamTensors> ids{};
};

BoundParams bind(Tape& tape, const MlpParams& params);
// rows x outputs
NodeId build_outputs(Tape& tape, const BoundParams& p, const TokenBatch& batch);
// rows x 1 column of log pi(target | context)
NodeId build_token_logprobs(Tape& tape, const BoundParams& p, const TokenBatch& batch);
ParamGrads collect_grads(const Gradients& g, const BoundParams& p);

// Per-sequence log-probs (or values) using one batched forward.
std::vector<std::vector<double>> batch_logprobs(const ModelParams& params,
                                                std::span<const SequenceRef> seqs);
std::vector<std::vector<double>> batch_values(const ValueParams& params,
                                              std::span<const SequenceRef> seqs);

// One AdamW state per parameter tensor.
class ParamOptimizer {
 public:
  ParamOptimizer() = default;
  explicit ParamOptimizer(const AdamConfig& cfg);
  void step(MlpParams& params, const ParamGrads& grads);
  std::array<AdamState, kParamTensors>& states() { return states_; }
  const std::array<AdamState, kParamTensors>& states() const { return states_; }

 private:
  std::array<AdamState, kParamTensors> states_;
};

}  // namespace prime
