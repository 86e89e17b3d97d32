#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

namespace prime {

using Token = std::size_t;

inline constexpr Token kBos = 0;
inline constexpr Token kEos = 1;
inline constexpr Token kPad = 2;
inline constexpr std::size_t kMaxVocab = 64;

// Symbol table. The first three ids are always BOS, EOS, PAD.
class Vocab {
 public:
  // `symbols` excludes the reserved entries, which are prepended.
  explicit Vocab(const std::vector<std::string>& symbols);

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(Token id) const;
  Token id(const std::string& symbol) const;
  bool contains(const std::string& symbol) const { return ids_.count(symbol) > 0; }
  const std::vector<std::string>& symbols() const { return symbols_; }

  std::vector<Token> encode(const std::string& text) const;  // space separated
  std::string decode(const std::vector<Token>& ids) const;

  bool operator==(const Vocab& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, Token> ids_;
};

// Symbols shared by every synthetic task: digits, '+', '=', ','.
const Vocab& task_vocab();

}  // namespace prime
