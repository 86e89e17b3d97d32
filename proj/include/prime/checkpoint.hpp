#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "prime/model.hpp"
#include "prime/tensor.hpp"

namespace prime {

// Versioned binary container. Every integer and float is little-endian.
//
//   bytes 0..7   magic "PRIMECKP"
//   u32          format version (kCheckpointVersion)
//   header       u32 context, u32 embed, u32 hidden,
//                u32 symbol count, then per symbol: u32 length + UTF-8 bytes
//   u32          record count
//   record*      u32 name length + name bytes, u8 kind, payload
//                  kind 0 real array: u32 rank, u64 dims[rank], f64 values
//                  kind 1 integer:    i64
//                  kind 2 text:       u32 length + bytes
//   u64          FNV-1a 64 of every preceding byte
//
// Records keep insertion order, so identical content serializes to identical bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class Container {
 public:
  using Value = std::variant<Tensor, std::int64_t, std::string>;

  Dims dims;
  std::vector<std::string> vocab;

  void put(const std::string& name, Tensor t);
  void put_int(const std::string& name, std::int64_t v);
  void put_real(const std::string& name, double v) { put(name, Tensor::scalar(v)); }
  void put_text(const std::string& name, std::string v);

  bool has(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  std::int64_t integer(const std::string& name) const;
  double real(const std::string& name) const { return tensor(name).item(); }
  const std::string& text(const std::string& name) const;
  std::size_t records() const { return records_.size(); }

  std::string serialize() const;
  static Container parse(std::string_view bytes);  // throws LoadError
  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  const Value& find(const std::string& name) const;
  void set(const std::string& name, Value v);
  std::vector<std::pair<std::string, Value>> records_;
};

void put_params(Container& c, const std::string& prefix, const MlpParams& p);
// Reads the five tensors under `prefix`, checking shapes against the header dims.
MlpParams get_params(const Container& c, const std::string& prefix);
void put_optimizer(Container& c, const std::string& prefix, const ParamOptimizer& opt);
ParamOptimizer get_optimizer(const Container& c, const std::string& prefix);

// Stand-alone language-model checkpoint.
void save_model(const std::filesystem::path& path, const ModelParams& params, const Vocab& vocab);
ModelParams load_model(const std::filesystem::path& path, Vocab* vocab_out = nullptr);

}  // namespace prime
