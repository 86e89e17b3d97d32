// Command-line front end: train, eval, plot, selftest.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prime/config.hpp"
#include "prime/errors.hpp"
#include "prime/plot.hpp"
#include "prime/selftest.hpp"
#include "prime/trainer.hpp"

namespace fs = std::filesystem;
using namespace prime;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
  if (!f) throw ConfigError("failed writing " + path.string());
}

fs::path checkpoint_path(const fs::path& dir, std::int64_t step) {
  return dir / ("step_" + std::to_string(step) + ".ckpt");
}

// Keeps the header and the rows with step <= `upto` of an existing metrics file.
std::string metrics_prefix(const fs::path& path, std::int64_t upto) {
  std::string text = std::string(kMetricsHeader) + "\n";
  if (!fs::exists(path)) return text;
  for (const MetricsRow& r : read_metrics_csv(path))
    if (r.step <= upto) text += format_metrics_row(r) + "\n";
  return text;
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              const std::string& resume, bool deterministic) {
  RunConfig cfg = parse_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  const fs::path dir = cfg.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    std::cerr << "error: cannot create output directory " << dir << ": " << ec.message() << "\n";
    return 1;
  }
  write_text(dir / "config.resolved", render_config(cfg));

  const TrainOptions opt = options_from_env(deterministic);
  TrainState state;
  if (!resume.empty()) {
    state = checkpoint_load(resume);
    std::cerr << "resumed from " << resume << " at step " << state.step << "\n";
  } else {
    state = init_state(cfg);
  }

  const fs::path metrics = dir / "metrics.csv";
  std::string csv = resume.empty() ? std::string(kMetricsHeader) + "\n" : metrics_prefix(metrics, state.step);
  write_text(metrics, csv);
  std::ofstream out(metrics, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot append to " + metrics.string());

  run_training(state, cfg, opt, [&](const MetricsRow& row, const TrainState& st) {
    out << format_metrics_row(row) << "\n";
    out.flush();
    if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0)
      checkpoint_save(st, cfg, checkpoint_path(dir, st.step));
    if (row.step % 10 == 0 || row.step == cfg.steps)
      std::fprintf(stderr, "step %lld reward %.3f filtered %.2f eval %.3f\n",
                   static_cast<long long>(row.step), row.reward_mean, row.filtered_frac, row.eval_acc);
  });
  checkpoint_save(state, cfg, dir / "final.ckpt");
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path) {
  const RunConfig cfg = parse_config(config_path);
  const TrainState state = checkpoint_load(checkpoint);
  const double acc = evaluate(state.policy, make_eval_set(cfg), static_cast<std::size_t>(cfg.max_len));
  std::printf("eval_acc %.6f over %d prompts (step %lld)\n", acc, cfg.eval_size,
              static_cast<long long>(state.step));
  return 0;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& out, std::size_t window) {
  std::vector<RunSeries> runs;
  for (const std::string& path : csvs) {
    RunSeries s;
    const fs::path p(path);
    // Label by run directory when the file is the conventional metrics.csv.
    s.label = p.filename() == "metrics.csv" && p.has_parent_path() ? p.parent_path().filename().string()
                                                                   : p.stem().string();
    s.rows = read_metrics_csv(p);
    runs.push_back(std::move(s));
  }
  for (const fs::path& written : write_plots(runs, out, window)) std::printf("%s\n", written.string().c_str());
  return 0;
}

int cmd_selftest(std::size_t groups) {
  auto results = run_invariant_suite();
  for (auto& r : run_oracle_suite(groups)) results.push_back(std::move(r));
  std::fputs(format_results(results).c_str(), stdout);
  for (const auto& r : results)
    if (!r.passed) return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PRIME: online RL with implicit process rewards on tiny language models"};
  app.require_subcommand(1);

  std::string config, out_dir, resume;
  bool deterministic = false;
  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config, "run config (key = value)")->required();
  train->add_option("--out", out_dir, "output directory (overrides out_dir)");
  train->add_option("--resume", resume, "training checkpoint to continue from");
  train->add_flag("--deterministic", deterministic, "single-threaded, wall_ms written as 0");

  std::string checkpoint, eval_config;
  auto* eval = app.add_subcommand("eval", "greedy accuracy of a checkpoint's policy");
  eval->add_option("--checkpoint", checkpoint, "training checkpoint")->required();
  eval->add_option("--config", eval_config, "config naming the task and eval set")->required();

  std::string plot_out;
  std::size_t window = 10;
  std::vector<std::string> csvs;
  auto* plot = app.add_subcommand("plot", "SVG charts of reward, PRM accuracy and eval accuracy");
  plot->add_option("--out", plot_out, "output path; <stem>_<metric>.svg is written per metric")->required();
  plot->add_option("--window", window, "moving-average window (1 = raw)")->check(CLI::PositiveNumber);
  plot->add_option("csv", csvs, "metrics CSV files")->required();

  std::size_t groups = 1000;
  auto* selftest = app.add_subcommand("selftest", "invariant and oracle-equivalence suite");
  selftest->add_option("--groups", groups, "random groups per oracle check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, out_dir, resume, deterministic);
    if (*eval) return cmd_eval(checkpoint, eval_config);
    if (*plot) return cmd_plot(csvs, plot_out, window);
    if (*selftest) return cmd_selftest(groups);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
