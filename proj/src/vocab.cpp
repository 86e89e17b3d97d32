#include "prime/vocab.hpp"

#include <sstream>

#include "prime/errors.hpp"

namespace prime {

Vocab::Vocab(const std::vector<std::string>& symbols) {
  symbols_ = {"<bos>", "<eos>", "<pad>"};
  symbols_.insert(symbols_.end(), symbols.begin(), symbols.end());
  if (symbols_.size() > kMaxVocab) {
    throw ConfigError("vocabulary of " + std::to_string(symbols_.size()) +
                      " symbols exceeds the limit of " + std::to_string(kMaxVocab));
  }
  for (Token i = 0; i < symbols_.size(); ++i) {
    if (!ids_.emplace(symbols_[i], i).second) {
      throw ConfigError("duplicate vocabulary symbol '" + symbols_[i] + "'");
    }
  }
}

const std::string& Vocab::symbol(Token id) const {
  require(id < symbols_.size(), "token id " + std::to_string(id) + " out of range");
  return symbols_[id];
}

Token Vocab::id(const std::string& symbol) const {
  auto it = ids_.find(symbol);
  require(it != ids_.end(), "unknown symbol '" + symbol + "'");
  return it->second;
}

std::vector<Token> Vocab::encode(const std::string& text) const {
  std::istringstream in(text);
  std::vector<Token> out;
  for (std::string s; in >> s;) out.push_back(id(s));
  return out;
}

std::string Vocab::decode(const std::vector<Token>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += symbol(ids[i]);
  }
  return out;
}

const Vocab& task_vocab() {
  static const Vocab v({"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "=", ","});
  return v;
}

}  // namespace prime
