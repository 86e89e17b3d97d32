// Acceptance run: one PASS/FAIL line per criterion, details indented above it.
// Usage: acceptance [run-dir]   (metrics CSVs of every training run land there)
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "prime/config.hpp"
#include "prime/selftest.hpp"
#include "prime/trainer.hpp"

using namespace prime;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr double kRunBudgetSeconds = 600.0;

fs::path g_dir = "acceptance_runs";
int g_failed = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void verdict(int id, const std::string& name, bool pass, const std::string& summary) {
  std::printf("[%s] %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), summary.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failed;
}

struct Run {
  std::vector<MetricsRow> rows;
  double seconds = 0.0;
};

// Trains from scratch in deterministic mode and keeps the metrics CSV.
Run train(const std::string& name, const std::string& overrides, std::uint64_t seed) {
  RunConfig cfg = parse_config_text(overrides + "seed = " + std::to_string(seed) + "\n", name);
  const auto t0 = std::chrono::steady_clock::now();
  TrainState st = init_state(cfg);
  Run run;
  run.rows = run_training(st, cfg, TrainOptions{});
  run.seconds = seconds_since(t0);
  fs::create_directories(g_dir / name);
  std::ofstream csv(g_dir / name / ("seed" + std::to_string(seed) + ".csv"));
  csv << kMetricsHeader << "\n";
  for (const MetricsRow& r : run.rows) csv << format_metrics_row(r) << "\n";
  std::printf("    %-22s seed %llu  %4zu steps  %6.1f s\n", name.c_str(),
              static_cast<unsigned long long>(seed), run.rows.size(), run.seconds);
  std::fflush(stdout);
  return run;
}

double final_ma(const Run& r, std::size_t window = 10) {
  double s = 0.0;
  const std::size_t n = std::min(window, r.rows.size());
  for (std::size_t i = r.rows.size() - n; i < r.rows.size(); ++i) s += r.rows[i].reward_mean;
  return s / static_cast<double>(n);
}

// First step whose training reward reaches `level`; -1 when never.
std::int64_t first_reach(const Run& r, double level) {
  for (const MetricsRow& row : r.rows)
    if (row.reward_mean >= level) return row.step;
  return -1;
}

double tail_std(const Run& r, std::size_t n) {
  const std::size_t m = std::min(n, r.rows.size());
  double mean = 0.0;
  for (std::size_t i = r.rows.size() - m; i < r.rows.size(); ++i) mean += r.rows[i].reward_mean;
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (std::size_t i = r.rows.size() - m; i < r.rows.size(); ++i)
    var += (r.rows[i].reward_mean - mean) * (r.rows[i].reward_mean - mean);
  return std::sqrt(var / static_cast<double>(m));
}

// Mean PRM accuracy over the last quarter of steps that report one.
double final_quartile_acc(const Run& r) {
  const std::size_t start = r.rows.size() - r.rows.size() / 4;
  double s = 0.0;
  int n = 0;
  for (std::size_t i = start; i < r.rows.size(); ++i)
    if (r.rows[i].prm_acc) {
      s += *r.rows[i].prm_acc;
      ++n;
    }
  return n ? s / n : std::nan("");
}

// Raises *worst to the slowest run seen so far.
bool within_budget(const std::vector<Run>& runs, double* worst) {
  for (const Run& r : runs) *worst = std::max(*worst, r.seconds);
  return *worst <= kRunBudgetSeconds;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

void invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_invariant_suite();
  const double secs = seconds_since(t0);
  int passed = 0;
  for (const CheckResult& r : results) {
    std::printf("    %-4s %-40s %s\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.detail.c_str());
    passed += r.passed;
  }
  const bool pass = passed == static_cast<int>(results.size()) && secs < 60.0;
  verdict(1, "invariant suite", pass,
          std::to_string(passed) + "/" + std::to_string(results.size()) + " checks in " + fmt("%.2f s", secs));
}

void oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_oracle_suite(1000);
  const double secs = seconds_since(t0);
  int passed = 0;
  for (const CheckResult& r : results) {
    std::printf("    %-4s %-40s %s\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.detail.c_str());
    passed += r.passed;
  }
  const bool pass = passed == static_cast<int>(results.size()) && secs < 30.0;
  verdict(2, "oracle equivalence", pass,
          std::to_string(passed) + "/" + std::to_string(results.size()) + " estimators on 1000 groups in " +
              fmt("%.2f s", secs));
}

std::map<std::string, std::vector<Run>> g_runs;

const std::vector<Run>& runs(const std::string& name, const std::string& overrides) {
  auto it = g_runs.find(name);
  if (it != g_runs.end()) return it->second;
  std::vector<Run> out;
  for (std::uint64_t s : kSeeds) out.push_back(train(name, overrides, s));
  return g_runs[name] = std::move(out);
}

const std::string kOutcomeOnly = "use_process_rewards = false\n";

void sample_efficiency() {
  const auto& prime = runs("prime", "");
  const auto& outcome = runs("rloo_outcome", kOutcomeOnly);
  int wins = 0;
  for (std::size_t i = 0; i < prime.size(); ++i) {
    const std::int64_t sp = first_reach(prime[i], 0.7), so = first_reach(outcome[i], 0.7);
    const bool reach = sp > 0 && (so < 0 || sp <= so);
    const bool ma = final_ma(prime[i]) >= final_ma(outcome[i]);
    wins += reach && ma;
    std::printf("    seed %llu: reward>=0.7 at step %lld vs %lld, final MA10 %.3f vs %.3f -> %s\n",
                static_cast<unsigned long long>(kSeeds[i]), static_cast<long long>(sp),
                static_cast<long long>(so), final_ma(prime[i]), final_ma(outcome[i]),
                reach && ma ? "win" : "loss");
  }
  double worst = 0.0;
  within_budget(prime, &worst);
  const bool budget = within_budget(outcome, &worst);
  verdict(3, "dense vs sparse sample efficiency", wins >= 2 && budget,
          std::to_string(wins) + "/3 seeds (need 2), slowest run " + fmt("%.1f s", worst));
}

void online_vs_offline() {
  const auto& online = runs("prm_online_200", "steps = 200\n");
  const auto& offline = runs("prm_offline_200", "steps = 200\nprm_mode = offline\noffline_pretrain_steps = 50\n");
  int wins = 0;
  for (std::size_t i = 0; i < online.size(); ++i) {
    const double a = final_quartile_acc(online[i]), b = final_quartile_acc(offline[i]);
    const bool win = a > 0.5 && a > b;
    wins += win;
    std::printf("    seed %llu: final-quartile PRM accuracy online %.3f vs frozen %.3f -> %s\n",
                static_cast<unsigned long long>(kSeeds[i]), a, b, win ? "win" : "loss");
  }
  double worst = 0.0;
  within_budget(online, &worst);
  const bool budget = within_budget(offline, &worst);
  verdict(4, "online vs offline PRM", wins >= 2 && budget,
          std::to_string(wins) + "/3 seeds (need 2), slowest run " + fmt("%.1f s", worst));
}

double mean_final_ma(const std::vector<Run>& rs) {
  double s = 0.0;
  for (const Run& r : rs) s += final_ma(r);
  return s / static_cast<double>(rs.size());
}

void estimator_generality() {
  bool all = true;
  std::string summary;
  double worst = 0.0;
  for (const char* est : {"reinforce", "grpo", "ppo"}) {
    const std::string base = std::string("estimator = ") + est + "\n";
    const auto& with = runs(std::string(est) + "_prime", base);
    const auto& without = runs(std::string(est) + "_outcome", base + kOutcomeOnly);
    within_budget(with, &worst);
    within_budget(without, &worst);
    for (std::size_t i = 0; i < with.size(); ++i)
      std::printf("    %-9s seed %llu: final MA10 with process rewards %.3f, outcome only %.3f\n", est,
                  static_cast<unsigned long long>(kSeeds[i]), final_ma(with[i]), final_ma(without[i]));
    const double a = mean_final_ma(with), b = mean_final_ma(without);
    const bool ok = a >= b - 0.02;
    all = all && ok;
    summary += std::string(est) + fmt(" %.3f vs %.3f", a, b) + (ok ? " ok; " : " WORSE; ");
  }
  verdict(5, "estimator generality", all && worst <= kRunBudgetSeconds,
          summary + "seed-mean final MA10, tie band 0.02");
}

void filter_ablation() {
  const auto& filtered = runs("prime", "");
  const auto& unfiltered = runs("prime_nofilter", "filter = false\n");
  int wins = 0;
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    const double a = tail_std(filtered[i], 100), b = tail_std(unfiltered[i], 100);
    wins += a <= b;
    std::printf("    seed %llu: std of training reward over last 100 steps, filter %.4f vs none %.4f -> %s\n",
                static_cast<unsigned long long>(kSeeds[i]), a, b, a <= b ? "win" : "loss");
  }
  verdict(6, "prompt-filter variance", wins >= 2, std::to_string(wins) + "/3 seeds (need 2)");
}

std::string csv_text(const std::vector<MetricsRow>& rows) {
  std::string s = std::string(kMetricsHeader) + "\n";
  for (const MetricsRow& r : rows) s += format_metrics_row(r) + "\n";
  return s;
}

void determinism() {
  const RunConfig cfg = parse_config_text("steps = 30\nseed = 4\n", "determinism");
  TrainState a = init_state(cfg), b = init_state(cfg);
  const std::vector<MetricsRow> full = run_training(a, cfg, TrainOptions{});
  const std::string ca = csv_text(full);
  const std::string cb = csv_text(run_training(b, cfg, TrainOptions{}));
  const bool same = ca == cb;

  RunConfig half = cfg;
  half.steps = 15;
  TrainState c = init_state(cfg);
  std::vector<MetricsRow> joined = run_training(c, half, TrainOptions{});
  const fs::path ckpt = g_dir / "resume_step15.ckpt";
  fs::create_directories(g_dir);
  checkpoint_save(c, cfg, ckpt);
  TrainState resumed = checkpoint_load(ckpt);
  const auto rest = run_training(resumed, cfg, TrainOptions{});
  joined.insert(joined.end(), rest.begin(), rest.end());
  const bool resume_ok = rest.size() == 15 && csv_text(joined) == ca && resumed.policy == a.policy;
  std::printf("    two 30-step runs: CSVs %s (%zu bytes)\n", same ? "bitwise identical" : "DIFFER", ca.size());
  std::printf("    resume at step 15: remaining rows %s, final policy %s\n",
              resume_ok ? "identical" : "DIFFER", resumed.policy == a.policy ? "identical" : "DIFFERS");
  verdict(7, "determinism and resume", same && resume_ok, same && resume_ok ? "bitwise reproducible" : "mismatch");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_dir = argv[1];
  const auto t0 = std::chrono::steady_clock::now();
  try {
    invariants();
    oracles();
    sample_efficiency();
    online_vs_offline();
    estimator_generality();
    filter_ablation();
    determinism();
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed; total %.1f s; run metrics in %s\n", g_failed, seconds_since(t0),
              g_dir.string().c_str());
  return g_failed == 0 ? 0 : 1;
}
