#include "prime/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>

#include "prime/errors.hpp"

namespace prime {
namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 60, kRight = 180, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::optional<double> pick(const MetricsRow& r, const std::string& metric) {
  if (metric == "reward") return r.reward_mean;
  if (metric == "prm_acc") return r.prm_acc;
  if (metric == "eval_acc") return r.eval_acc;
  throw ContractViolation("unknown plot metric '" + metric + "'");
}

// Moving average over the present values in each trailing window.
std::vector<std::optional<double>> smooth(const std::vector<std::optional<double>>& x,
                                          std::size_t window) {
  std::vector<std::optional<double>> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i]) continue;
    double s = 0.0;
    int n = 0;
    for (std::size_t j = i + 1 > window ? i + 1 - window : 0; j <= i; ++j)
      if (x[j]) {
        s += *x[j];
        ++n;
      }
    out[i] = s / n;
  }
  return out;
}

}  // namespace

std::vector<double> moving_average(const std::vector<double>& x, std::size_t window) {
  require(window >= 1, "moving average window must be >= 1");
  std::vector<double> out(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += x[i];
    if (i >= window) s -= x[i - window];
    out[i] = s / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

std::string render_svg(const std::vector<RunSeries>& runs, const std::string& metric,
                       std::size_t window) {
  require(window >= 1, "plot window must be >= 1");
  std::string title = metric;
  for (const PlotMetric& m : kPlotMetrics)
    if (metric == m.key) title = m.title;

  double xmin = 0, xmax = 1;
  bool any = false;
  for (const RunSeries& r : runs)
    for (const MetricsRow& row : r.rows) {
      const double s = static_cast<double>(row.step);
      xmin = any ? std::min(xmin, s) : s;
      xmax = any ? std::max(xmax, s) : s;
      any = true;
    }
  if (xmax <= xmin) xmax = xmin + 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double s) { return kLeft + (s - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double v) { return kTop + (1.0 - std::clamp(v, 0.0, 1.0)) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" +
         num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(kLeft) + "\" y=\"24\" font-size=\"14\">" + escape(title);
  if (window > 1) svg += " (" + std::to_string(window) + "-step moving average)";
  svg += "</text>\n";
  // Axes and grid: y spans [0, 1] for every plotted metric.
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0, y = sy(v);
    svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(y) + "\" x2=\"" + num(kLeft + pw) +
           "\" y2=\"" + num(y) + "\" stroke=\"#ddd\"/>\n";
    svg += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" +
           num(v) + "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double s = xmin + (xmax - xmin) * i / 4.0;
    svg += "<text x=\"" + num(sx(s)) + "\" y=\"" + num(kTop + ph + 18) +
           "\" text-anchor=\"middle\">" + std::to_string(static_cast<long long>(std::llround(s))) +
           "</text>\n";
  }
  svg += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) +
         "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 10) +
         "\" text-anchor=\"middle\">step</text>\n";

  for (std::size_t r = 0; r < runs.size(); ++r) {
    const char* color = kPalette[r % std::size(kPalette)];
    std::vector<std::optional<double>> raw;
    for (const MetricsRow& row : runs[r].rows) raw.push_back(pick(row, metric));
    const auto ys = smooth(raw, window);
    std::string points;
    auto flush = [&] {
      if (!points.empty())
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
      points.clear();
    };
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (!ys[i]) {
        flush();
        continue;
      }
      if (!points.empty()) points += ' ';
      points += num(sx(static_cast<double>(runs[r].rows[i].step))) + "," + num(sy(*ys[i]));
    }
    flush();
    const double ly = kTop + 14 + 18.0 * static_cast<double>(r);
    svg += "<line x1=\"" + num(kLeft + pw + 12) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" +
           num(kLeft + pw + 32) + "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(kLeft + pw + 38) + "\" y=\"" + num(ly) + "\">" +
           escape(runs[r].label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<std::filesystem::path> write_plots(const std::vector<RunSeries>& runs,
                                               const std::filesystem::path& out,
                                               std::size_t window) {
  require(!runs.empty(), "plot needs at least one run");
  std::filesystem::path stem = out;
  if (stem.extension() == ".svg") stem.replace_extension();
  if (!stem.parent_path().empty()) std::filesystem::create_directories(stem.parent_path());
  std::vector<std::filesystem::path> written;
  for (const PlotMetric& m : kPlotMetrics) {
    std::filesystem::path path = stem;
    path += std::string("_") + m.key + ".svg";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << render_svg(runs, m.key, window);
    if (!f) throw ConfigError("failed writing " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace prime
