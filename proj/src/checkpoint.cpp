#include "prime/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "prime/errors.hpp"

namespace prime {
namespace {

constexpr std::string_view kMagic = "PRIMECKP";

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string& bytes() { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(le(8)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(take(n));
  }
  std::string_view take(std::size_t n) {
    if (n > in_.size() - pos_) throw LoadError("checkpoint truncated");
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::uint64_t le(int n) {
    std::string_view s = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

void Container::set(const std::string& name, Value v) {
  for (auto& [n, existing] : records_) {
    if (n == name) {
      existing = std::move(v);
      return;
    }
  }
  records_.emplace_back(name, std::move(v));
}

void Container::put(const std::string& name, Tensor t) { set(name, std::move(t)); }
void Container::put_int(const std::string& name, std::int64_t v) { set(name, v); }
void Container::put_text(const std::string& name, std::string v) { set(name, std::move(v)); }

bool Container::has(const std::string& name) const {
  for (const auto& r : records_)
    if (r.first == name) return true;
  return false;
}

const Container::Value& Container::find(const std::string& name) const {
  for (const auto& r : records_)
    if (r.first == name) return r.second;
  throw LoadError("checkpoint has no record '" + name + "'");
}

const Tensor& Container::tensor(const std::string& name) const {
  const auto* t = std::get_if<Tensor>(&find(name));
  if (!t) throw LoadError("record '" + name + "' is not a real array");
  return *t;
}

std::int64_t Container::integer(const std::string& name) const {
  const auto* v = std::get_if<std::int64_t>(&find(name));
  if (!v) throw LoadError("record '" + name + "' is not an integer");
  return *v;
}

const std::string& Container::text(const std::string& name) const {
  const auto* v = std::get_if<std::string>(&find(name));
  if (!v) throw LoadError("record '" + name + "' is not text");
  return *v;
}

std::string Container::serialize() const {
  Writer w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(dims.context));
  w.u32(static_cast<std::uint32_t>(dims.embed));
  w.u32(static_cast<std::uint32_t>(dims.hidden));
  w.u32(static_cast<std::uint32_t>(vocab.size()));
  for (const std::string& s : vocab) w.str(s);
  w.u32(static_cast<std::uint32_t>(records_.size()));
  for (const auto& [name, value] : records_) {
    w.str(name);
    if (const auto* t = std::get_if<Tensor>(&value)) {
      w.u8(0);
      w.u32(static_cast<std::uint32_t>(t->rank()));
      for (std::size_t d : t->shape()) w.u64(d);
      for (double v : t->values()) w.f64(v);
    } else if (const auto* i = std::get_if<std::int64_t>(&value)) {
      w.u8(1);
      w.i64(*i);
    } else {
      w.u8(2);
      w.str(std::get<std::string>(value));
    }
  }
  const std::uint64_t sum = fnv1a(w.bytes());
  w.u64(sum);
  return std::move(w.bytes());
}

Container Container::parse(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 12) throw LoadError("checkpoint truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8));
  Reader r(body);
  if (r.take(kMagic.size()) != kMagic) throw LoadError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint format version " + std::to_string(version) +
                    " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (fnv1a(body) != tail.u64()) throw LoadError("checkpoint checksum mismatch (corrupt or truncated)");

  Container c;
  c.dims.context = r.u32();
  c.dims.embed = r.u32();
  c.dims.hidden = r.u32();
  const std::uint32_t nsym = r.u32();
  if (nsym > kMaxVocab) throw LoadError("checkpoint vocabulary too large");
  for (std::uint32_t i = 0; i < nsym; ++i) c.vocab.push_back(r.str());
  const std::uint32_t nrec = r.u32();
  for (std::uint32_t i = 0; i < nrec; ++i) {
    std::string name = r.str();
    const std::uint8_t kind = r.u8();
    if (kind == 0) {
      const std::uint32_t rank = r.u32();
      if (rank > 8) throw LoadError("record '" + name + "' has implausible rank");
      std::vector<std::size_t> shape(rank);
      std::size_t n = 1;
      for (auto& d : shape) {
        d = r.u64();
        n *= d;
      }
      if (n > r.remaining() / 8) throw LoadError("checkpoint truncated in '" + name + "'");
      std::vector<double> data(n);
      for (double& v : data) v = r.f64();
      c.records_.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    } else if (kind == 1) {
      c.records_.emplace_back(std::move(name), r.i64());
    } else if (kind == 2) {
      c.records_.emplace_back(std::move(name), r.str());
    } else {
      throw LoadError("record '" + name + "' has unknown kind " + std::to_string(kind));
    }
  }
  if (r.remaining() != 0) throw LoadError("trailing bytes after checkpoint records");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void put_params(Container& c, const std::string& prefix, const MlpParams& p) {
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < kParamTensors; ++i) c.put(prefix + "." + kParamNames[i], *ts[i]);
}

MlpParams get_params(const Container& c, const std::string& prefix) {
  MlpParams p;
  p.dims = c.dims;
  p.vocab = c.vocab.size();
  const auto ts = p.tensors();
  for (std::size_t i = 0; i < kParamTensors; ++i) *ts[i] = c.tensor(prefix + "." + kParamNames[i]);
  try {
    p.validate();
  } catch (const ContractViolation& e) {
    throw LoadError("parameters '" + prefix + "': " + e.what());
  }
  return p;
}

void put_optimizer(Container& c, const std::string& prefix, const ParamOptimizer& opt) {
  for (std::size_t i = 0; i < kParamTensors; ++i) {
    const AdamState& s = opt.states()[i];
    const std::string base = prefix + "." + kParamNames[i];
    c.put_real(base + ".lr", s.cfg.lr);
    c.put_real(base + ".beta1", s.cfg.beta1);
    c.put_real(base + ".beta2", s.cfg.beta2);
    c.put_real(base + ".eps", s.cfg.eps);
    c.put_real(base + ".weight_decay", s.cfg.weight_decay);
    c.put_int(base + ".t", s.t);
    // Moments are allocated on the first step; store "not yet" as an empty vector.
    c.put(base + ".m", s.m.size() ? s.m : Tensor({0}));
    c.put(base + ".v", s.v.size() ? s.v : Tensor({0}));
  }
}

ParamOptimizer get_optimizer(const Container& c, const std::string& prefix) {
  ParamOptimizer opt;
  for (std::size_t i = 0; i < kParamTensors; ++i) {
    AdamState& s = opt.states()[i];
    const std::string base = prefix + "." + kParamNames[i];
    s.cfg.lr = c.real(base + ".lr");
    s.cfg.beta1 = c.real(base + ".beta1");
    s.cfg.beta2 = c.real(base + ".beta2");
    s.cfg.eps = c.real(base + ".eps");
    s.cfg.weight_decay = c.real(base + ".weight_decay");
    s.t = c.integer(base + ".t");
    if (const Tensor& m = c.tensor(base + ".m"); m.size()) s.m = m;
    if (const Tensor& v = c.tensor(base + ".v"); v.size()) s.v = v;
  }
  return opt;
}

void save_model(const std::filesystem::path& path, const ModelParams& params, const Vocab& vocab) {
  Container c;
  c.dims = params.dims;
  c.vocab = vocab.symbols();
  put_params(c, "model", params);
  c.save(path);
}

ModelParams load_model(const std::filesystem::path& path, Vocab* vocab_out) {
  const Container c = Container::load(path);
  if (c.vocab.size() < 3) throw LoadError("checkpoint vocabulary lacks reserved symbols");
  if (vocab_out) {
    *vocab_out = Vocab(std::vector<std::string>(c.vocab.begin() + 3, c.vocab.end()));
  }
  return ModelParams{get_params(c, "model")};
}

}  // namespace prime
