#include "prime/tasks.hpp"

#include <algorithm>
#include "json.hpp"

#include "prime/errors.hpp"
#include "prime/rng.hpp"

namespace prime {
namespace {

Token digit(int d) { return task_vocab().id(std::to_string(d)); }
Token plus() { return task_vocab().id("+"); }
Token comma() { return task_vocab().id(","); }

void append_number(std::vector<Token>& out, int value) {
  for (char c : std::to_string(value)) out.push_back(digit(c - '0'));
}

int pow10(int e) {
  int v = 1;
  while (e-- > 0) v *= 10;
  return v;
}

}  // namespace

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kAddChain: return "addchain";
    case TaskKind::kSortSeq: return "sortseq";
    case TaskKind::kMultiQuery: return "multiquery";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "addchain") return TaskKind::kAddChain;
  if (s == "sortseq") return TaskKind::kSortSeq;
  if (s == "multiquery") return TaskKind::kMultiQuery;
  throw ConfigError("unknown task kind '" + s + "'");
}

void TaskSpec::validate() const {
  switch (kind) {
    case TaskKind::kAddChain:
      if (operands < 2 || operands > 8) throw ConfigError("addchain operands must lie in [2, 8]");
      if (digits < 1 || digits > 4) throw ConfigError("addchain digits must lie in [1, 4]");
      break;
    case TaskKind::kSortSeq:
      if (seq_len < 1 || seq_len > 32) throw ConfigError("sortseq seq_len must lie in [1, 32]");
      break;
    case TaskKind::kMultiQuery:
      if (queries < 1 || queries > 16) throw ConfigError("multiquery queries must lie in [1, 16]");
      break;
  }
}

Token answer_separator() { return task_vocab().id("="); }

PromptInstance make_addchain(const std::vector<int>& operands) {
  require(operands.size() >= 2, "addchain needs at least two operands");
  PromptInstance inst;
  inst.kind = TaskKind::kAddChain;
  int sum = 0;
  for (std::size_t i = 0; i < operands.size(); ++i) {
    require(operands[i] >= 0, "addchain operands must be non-negative");
    if (i) inst.prompt.push_back(plus());
    append_number(inst.prompt, operands[i]);
    sum += operands[i];
  }
  inst.prompt.push_back(answer_separator());
  append_number(inst.truth, sum);
  return inst;
}

PromptInstance make_sortseq(const std::vector<int>& values) {
  require(!values.empty(), "sortseq needs at least one value");
  PromptInstance inst;
  inst.kind = TaskKind::kSortSeq;
  for (int v : values) {
    require(v >= 0 && v <= 9, "sortseq values are single digits");
    inst.prompt.push_back(digit(v));
  }
  inst.prompt.push_back(answer_separator());
  std::vector<int> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  for (int v : sorted) inst.truth.push_back(digit(v));
  return inst;
}

PromptInstance make_multiquery(const std::vector<std::pair<int, int>>& pairs) {
  require(!pairs.empty(), "multiquery needs at least one query");
  PromptInstance inst;
  inst.kind = TaskKind::kMultiQuery;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [a, b] = pairs[i];
    require(a >= 0 && b >= 0 && a + b <= 9, "multiquery sums must be single digits");
    if (i) inst.prompt.push_back(comma());
    inst.prompt.push_back(digit(a));
    inst.prompt.push_back(plus());
    inst.prompt.push_back(digit(b));
    inst.truth.push_back(digit(a + b));
  }
  inst.prompt.push_back(answer_separator());
  return inst;
}

std::vector<PromptInstance> generate_batch(const TaskSpec& spec, std::size_t count,
                                           std::uint64_t seed) {
  spec.validate();
  require(count >= 1, "generate_batch: count must be >= 1");
  std::vector<PromptInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, {i});
    PromptInstance inst;
    switch (spec.kind) {
      case TaskKind::kAddChain: {
        std::vector<int> ops(static_cast<std::size_t>(spec.operands));
        for (int& v : ops) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(pow10(spec.digits))));
        inst = make_addchain(ops);
        break;
      }
      case TaskKind::kSortSeq: {
        std::vector<int> vals(static_cast<std::size_t>(spec.seq_len));
        for (int& v : vals) v = static_cast<int>(rng.below(10));
        inst = make_sortseq(vals);
        break;
      }
      case TaskKind::kMultiQuery: {
        std::vector<std::pair<int, int>> qs(static_cast<std::size_t>(spec.queries));
        for (auto& [a, b] : qs) {
          a = static_cast<int>(rng.below(10));
          b = static_cast<int>(rng.below(static_cast<std::uint64_t>(10 - a)));
        }
        inst = make_multiquery(qs);
        break;
      }
    }
    inst.id = i;
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<Token> extract_answer(std::span<const Token> response) {
  const Token sep = answer_separator();
  auto last = std::find(response.rbegin(), response.rend(), sep);
  auto begin = last == response.rend() ? response.begin() : last.base();
  std::vector<Token> out;
  for (auto it = begin; it != response.end(); ++it) {
    if (*it != kPad && *it != kEos) out.push_back(*it);
  }
  return out;
}

OutcomeLabel verify_exact(const PromptInstance& inst, std::span<const Token> response) {
  OutcomeLabel label;
  label.total = 1;
  label.matched = !response.empty() && extract_answer(response) == inst.truth;
  label.passed = label.matched ? 1 : 0;
  label.reward = label.matched ? 1.0 : 0.0;
  return label;
}

OutcomeLabel verify_fractional(const PromptInstance& inst, std::span<const Token> response) {
  require(!inst.truth.empty(), "verify_fractional: instance has no sub-answers");
  const std::vector<Token> answer = extract_answer(response);
  OutcomeLabel label;
  label.total = static_cast<int>(inst.truth.size());
  for (std::size_t i = 0; i < inst.truth.size() && i < answer.size(); ++i) {
    if (answer[i] == inst.truth[i]) ++label.passed;
  }
  label.reward = static_cast<double>(label.passed) / label.total;
  label.matched = label.passed == label.total;
  return label;
}

OutcomeLabel verify(const PromptInstance& inst, std::span<const Token> response) {
  return inst.kind == TaskKind::kMultiQuery ? verify_fractional(inst, response)
                                            : verify_exact(inst, response);
}

std::string to_record(const PromptInstance& inst) {
  const Vocab& v = task_vocab();
  nlohmann::json j = {{"id", inst.id},
                      {"kind", to_string(inst.kind)},
                      {"prompt", v.decode(inst.prompt)},
                      {"truth", v.decode(inst.truth)}};
  return j.dump();
}

PromptInstance from_record(const std::string& line) {
  const Vocab& v = task_vocab();
  try {
    const auto j = nlohmann::json::parse(line);
    PromptInstance inst;
    inst.id = j.at("id").get<std::uint64_t>();
    inst.kind = parse_task_kind(j.at("kind").get<std::string>());
    inst.prompt = v.encode(j.at("prompt").get<std::string>());
    inst.truth = v.encode(j.at("truth").get<std::string>());
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed task record: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("malformed task record: ") + e.what());
  }
}

}  // namespace prime
