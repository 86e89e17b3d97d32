#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prime/vocab.hpp"

namespace prime {

enum class TaskKind { kAddChain, kSortSeq, kMultiQuery };

std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

// Difficulty knobs. Only the knobs of the selected kind are used.
struct TaskSpec {
  TaskKind kind = TaskKind::kAddChain;
  int operands = 3;  // addchain: number of summands
  int digits = 1;    // addchain: max digits per summand
  int seq_len = 4;   // sortseq: sequence length
  int queries = 2;   // multiquery: number of single-digit sums
  void validate() const;  // throws ConfigError
  bool binary() const { return kind != TaskKind::kMultiQuery; }
};

struct PromptInstance {
  std::vector<Token> prompt;  // ends with the '=' separator
  std::vector<Token> truth;
  std::uint64_t id = 0;
  TaskKind kind = TaskKind::kAddChain;
  bool operator==(const PromptInstance&) const = default;
};

struct OutcomeLabel {
  double reward = 0.0;  // r_o in [0, 1]
  bool matched = false;
  int passed = 0;
  int total = 0;
};

Token answer_separator();

// Deterministic per seed; instance ids are 0..count-1.
std::vector<PromptInstance> generate_batch(const TaskSpec& spec, std::size_t count,
                                           std::uint64_t seed);

PromptInstance make_addchain(const std::vector<int>& operands);
PromptInstance make_sortseq(const std::vector<int>& values);
PromptInstance make_multiquery(const std::vector<std::pair<int, int>>& pairs);

// Tokens after the last '=' in the response (the whole response if it has
// none), with PAD and EOS removed.
std::vector<Token> extract_answer(std::span<const Token> response);

// 1 on exact match of the extracted answer, else 0.
OutcomeLabel verify_exact(const PromptInstance& inst, std::span<const Token> response);
// Position-wise fraction of the m sub-answers that match.
OutcomeLabel verify_fractional(const PromptInstance& inst, std::span<const Token> response);
// Picks the verifier matching the instance kind.
OutcomeLabel verify(const PromptInstance& inst, std::span<const Token> response);

// One JSON object per line: {"id":..,"kind":..,"prompt":"..","truth":".."}.
std::string to_record(const PromptInstance& inst);
PromptInstance from_record(const std::string& line);

}  // namespace prime
