#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prime {

// Caller broke a documented precondition (shape mismatch, bad id, K < 2, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A NaN or Inf showed up where finite values are required.
class NumericFault : public std::runtime_error {
 public:
  explicit NumericFault(const std::string& what, std::size_t node = npos)
      : std::runtime_error(what), node_(node) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace prime
