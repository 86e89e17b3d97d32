#include "prime/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "prime/errors.hpp"

namespace prime {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PRIME_INT(key, field)                                                   \
  Key {                                                                         \
    key, [](RunConfig& c, const std::string& v) { c.field = parse_number<int>(v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }              \
  }
#define PRIME_REAL(key, field)                                                       \
  Key {                                                                              \
    key, [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(v); }, \
        [](const RunConfig& c) { return fmt_real(c.field); }                         \
  }
#define PRIME_BOOL(key, field)                                                 \
  Key {                                                                        \
    key, [](RunConfig& c, const std::string& v) { c.field = parse_bool(v); },  \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); } \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"task", [](RunConfig& c, const std::string& v) { c.task.kind = parse_task_kind(v); },
       [](const RunConfig& c) { return to_string(c.task.kind); }},
      PRIME_INT("operands", task.operands),
      PRIME_INT("digits", task.digits),
      PRIME_INT("seq_len", task.seq_len),
      PRIME_INT("queries", task.queries),
      {"context", [](RunConfig& c, const std::string& v) { c.dims.context = parse_number<std::size_t>(v); },
       [](const RunConfig& c) { return std::to_string(c.dims.context); }},
      {"embed", [](RunConfig& c, const std::string& v) { c.dims.embed = parse_number<std::size_t>(v); },
       [](const RunConfig& c) { return std::to_string(c.dims.embed); }},
      {"hidden", [](RunConfig& c, const std::string& v) { c.dims.hidden = parse_number<std::size_t>(v); },
       [](const RunConfig& c) { return std::to_string(c.dims.hidden); }},
      PRIME_INT("K", k_samples),
      PRIME_INT("batch_prompts", batch_prompts),
      PRIME_INT("steps", steps),
      PRIME_INT("epochs", epochs),
      PRIME_REAL("policy_lr", policy_lr),
      PRIME_REAL("prm_lr", prm_lr),
      PRIME_REAL("value_lr", value_lr),
      PRIME_REAL("weight_decay", weight_decay),
      PRIME_REAL("beta", beta),
      PRIME_REAL("clip_eps", clip_eps),
      {"estimator", [](RunConfig& c, const std::string& v) { c.advantage.estimator = parse_estimator(v); },
       [](const RunConfig& c) { return to_string(c.advantage.estimator); }},
      PRIME_REAL("gamma", advantage.gamma),
      PRIME_REAL("lambda", advantage.lambda),
      {"process_baseline",
       [](RunConfig& c, const std::string& v) { c.advantage.baseline = parse_process_baseline(v); },
       [](const RunConfig& c) { return to_string(c.advantage.baseline); }},
      PRIME_BOOL("use_process_rewards", advantage.use_process_rewards),
      PRIME_BOOL("use_outcome", advantage.use_outcome),
      {"ref_mode", [](RunConfig& c, const std::string& v) { c.ref_mode = parse_ref_mode(v); },
       [](const RunConfig& c) { return to_string(c.ref_mode); }},
      {"forward_mode",
       [](RunConfig& c, const std::string& v) {
         if (v == "single") c.forward_mode = ForwardMode::kSingle;
         else if (v == "double") c.forward_mode = ForwardMode::kDouble;
         else throw ConfigError("forward_mode must be single or double");
       },
       [](const RunConfig& c) { return to_string(c.forward_mode); }},
      {"prm_loss", [](RunConfig& c, const std::string& v) { c.prm_loss = parse_prm_loss(v); },
       [](const RunConfig& c) { return to_string(c.prm_loss); }},
      {"prm_mode",
       [](RunConfig& c, const std::string& v) {
         if (v == "online") c.prm_mode = PrmMode::kOnline;
         else if (v == "offline") c.prm_mode = PrmMode::kOffline;
         else throw ConfigError("prm_mode must be online or offline");
       },
       [](const RunConfig& c) { return to_string(c.prm_mode); }},
      PRIME_INT("offline_pretrain_steps", offline_pretrain_steps),
      PRIME_BOOL("filter", filter),
      PRIME_REAL("filter_lo", filter_lo),
      PRIME_REAL("filter_hi", filter_hi),
      PRIME_REAL("temperature", temperature),
      PRIME_INT("max_len", max_len),
      PRIME_INT("sft_steps", sft_steps),
      PRIME_INT("sft_batch", sft_batch),
      PRIME_REAL("sft_lr", sft_lr),
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      PRIME_INT("eval_size", eval_size),
      PRIME_INT("eval_every", eval_every),
      PRIME_INT("checkpoint_every", checkpoint_every),
      {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
       [](const RunConfig& c) { return c.out_dir; }},
  };
  return table;
}

#undef PRIME_INT
#undef PRIME_REAL
#undef PRIME_BOOL

}  // namespace

std::string to_string(ForwardMode m) { return m == ForwardMode::kSingle ? "single" : "double"; }
std::string to_string(PrmMode m) { return m == PrmMode::kOnline ? "online" : "offline"; }

void RunConfig::validate() const {
  task.validate();
  advantage.validate();
  if (dims.context == 0 || dims.embed == 0 || dims.hidden == 0)
    throw ConfigError("model dims must be positive");
  const bool group_estimator = advantage.estimator == Estimator::kRloo ||
                               advantage.estimator == Estimator::kGrpo;
  if (k_samples < 1) throw ConfigError("K must be >= 1");
  if (group_estimator && k_samples < 2)
    throw ConfigError("K >= 2 is required by estimator " + to_string(advantage.estimator));
  if (batch_prompts < 1) throw ConfigError("batch_prompts must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  for (double lr : {policy_lr, prm_lr, value_lr, sft_lr})
    if (!(lr >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("clip_eps must lie in (0, 1)");
  if (!(filter_lo >= 0.0 && filter_lo < filter_hi && filter_hi <= 1.0))
    throw ConfigError("filter bounds must satisfy 0 <= filter_lo < filter_hi <= 1");
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (max_len < 1 || max_len > 256) throw ConfigError("max_len must lie in [1, 256]");
  if (sft_steps < 0 || sft_batch < 1) throw ConfigError("sft_steps >= 0 and sft_batch >= 1 required");
  if (offline_pretrain_steps < 0) throw ConfigError("offline_pretrain_steps must be >= 0");
  if (eval_size < 1 || eval_every < 1) throw ConfigError("eval_size and eval_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

SamplerCfg RunConfig::sampler() const {
  SamplerCfg s;
  s.temperature = temperature;
  s.max_len = static_cast<std::size_t>(max_len);
  return s;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Key* match = nullptr;
    for (const Key& k : keys())
      if (key == k.name) match = &k;
    if (!match) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      match->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace prime
