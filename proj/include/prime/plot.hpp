#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "prime/trainer.hpp"

namespace prime {

struct RunSeries {
  std::string label;
  std::vector<MetricsRow> rows;
};

// Trailing moving average; the first window-1 points average what exists so far.
std::vector<double> moving_average(const std::vector<double>& x, std::size_t window);

struct PlotMetric {
  const char* key;    // file suffix
  const char* title;
};
inline constexpr PlotMetric kPlotMetrics[] = {
    {"reward", "training reward (pre-filter mean)"},
    {"prm_acc", "PRM pairwise accuracy"},
    {"eval_acc", "greedy eval accuracy"},
};

// One SVG document for `metric`, one labeled polyline per run. Steps with no
// PRM accuracy break the line rather than plotting a value.
std::string render_svg(const std::vector<RunSeries>& runs, const std::string& metric,
                       std::size_t window);

// Writes <stem>_<metric>.svg next to `out` for every metric; returns the paths.
std::vector<std::filesystem::path> write_plots(const std::vector<RunSeries>& runs,
                                               const std::filesystem::path& out,
                                               std::size_t window);

}  // namespace prime
