#pragma once

// Standalone SVG rendering: zero-centred diverging heatmaps for saliency maps
// and grouped boxplots for evaluation reports. Output depends only on the
// input values (no timestamps), so identical inputs give identical files.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "crits/core.hpp"
#include "crits/eval.hpp"

namespace crits::svg {

namespace detail {

inline std::string fixed(double v, int precision = 2) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, precision);
  if (ec != std::errc{}) return "0";
  return std::string(buf, end);
}

inline std::string escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Blue (negative) - white (zero) - red (positive); `a` in [-1, 1].
inline std::string diverging(double a) {
  a = std::clamp(a, -1.0, 1.0);
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(a))));
  char buf[8];
  if (a >= 0) std::snprintf(buf, sizeof buf, "#ff%02x%02x", fade, fade);
  else std::snprintf(buf, sizeof buf, "#%02x%02xff", fade, fade);
  return buf;
}

constexpr const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d"};

struct Quartiles {
  double lo, q1, median, q3, hi;
};

inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted[0];
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  return i + 1 < sorted.size() ? sorted[i] + frac * (sorted[i + 1] - sorted[i]) : sorted[i];
}

inline Quartiles quartiles(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return {v.front(), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), v.back()};
}

}  // namespace detail

/// One row per channel, one cell per time step; colour scale symmetric around 0.
inline std::string heatmap(const SaliencyMap& map, std::string_view title) {
  const double cell_w = std::max(2.0, 800.0 / static_cast<double>(std::max<std::size_t>(1, map.length())));
  const double cell_h = 24.0;
  const double left = 50.0, top = 40.0;
  const double width = left + cell_w * static_cast<double>(map.length()) + 20.0;
  const double height = top + cell_h * static_cast<double>(map.channels()) + 40.0;
  double scale = 0.0;
  for (double v : map.values()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) scale = 1.0;

  using detail::fixed;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(width) + "\" height=\"" + fixed(height) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(left) + "\" y=\"20\">" + detail::escape(title) + " (|max| = " + format_double(scale) +
       ")</text>\n";
  for (std::size_t c = 0; c < map.channels(); ++c) {
    const double y = top + cell_h * static_cast<double>(c);
    s += "<text x=\"5\" y=\"" + fixed(y + cell_h * 0.65) + "\">ch" + std::to_string(c) + "</text>\n";
    for (std::size_t t = 0; t < map.length(); ++t) {
      s += "<rect x=\"" + fixed(left + cell_w * static_cast<double>(t)) + "\" y=\"" + fixed(y) + "\" width=\"" +
           fixed(cell_w) + "\" height=\"" + fixed(cell_h) + "\" fill=\"" + detail::diverging(map(c, t) / scale) +
           "\"/>\n";
    }
  }
  const double axis_y = top + cell_h * static_cast<double>(map.channels()) + 16.0;
  s += "<text x=\"" + fixed(left) + "\" y=\"" + fixed(axis_y) + "\">t=0</text>\n";
  s += "<text x=\"" + fixed(width - 60.0) + "\" y=\"" + fixed(axis_y) + "\">t=" + std::to_string(map.length() - 1) +
       "</text>\n";
  s += "</svg>\n";
  return s;
}

/// Boxplots of one metric: a group per setting, a box per explainer.
/// Sparsity settings are per-instance, so they collapse into one group.
inline std::string boxplot(const std::vector<EvalRecord>& records, std::string_view metric) {
  std::vector<std::string> settings;
  std::vector<std::string> explainers;
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  const bool pooled = metric == "sparsity";
  for (const EvalRecord& r : records) {
    if (r.metric != metric) continue;
    const std::string setting = pooled ? "all instances" : r.setting;
    if (std::find(settings.begin(), settings.end(), setting) == settings.end()) settings.push_back(setting);
    if (std::find(explainers.begin(), explainers.end(), r.explainer) == explainers.end()) explainers.push_back(r.explainer);
    groups[{setting, r.explainer}].push_back(r.value);
  }
  std::sort(explainers.begin(), explainers.end());

  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& [key, vals] : groups) {
    for (double v : vals) {
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  }
  if (hi <= lo) hi = lo + 1.0;

  using detail::fixed;
  const double box_w = 18.0, gap = 30.0, left = 60.0, top = 40.0, plot_h = 260.0;
  const double group_w = box_w * static_cast<double>(std::max<std::size_t>(1, explainers.size())) + gap;
  const double width = left + group_w * static_cast<double>(std::max<std::size_t>(1, settings.size())) + 160.0;
  const double height = top + plot_h + 60.0;
  const auto ypos = [&](double v) { return top + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(width) + "\" height=\"" + fixed(height) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(left) + "\" y=\"20\">" + detail::escape(metric) + "</text>\n";
  s += "<line x1=\"" + fixed(left - 5) + "\" y1=\"" + fixed(top) + "\" x2=\"" + fixed(left - 5) + "\" y2=\"" +
       fixed(top + plot_h) + "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = lo + (hi - lo) * tick / 4.0;
    s += "<text x=\"2\" y=\"" + fixed(ypos(v) + 4) + "\">" + fixed(v, 4) + "</text>\n";
  }
  for (std::size_t g = 0; g < settings.size(); ++g) {
    const double gx = left + group_w * static_cast<double>(g);
    s += "<text x=\"" + fixed(gx) + "\" y=\"" + fixed(top + plot_h + 20) + "\">" + detail::escape(settings[g]) +
         "</text>\n";
    for (std::size_t e = 0; e < explainers.size(); ++e) {
      auto it = groups.find({settings[g], explainers[e]});
      if (it == groups.end() || it->second.empty()) continue;
      const auto q = detail::quartiles(it->second);
      const double x = gx + box_w * static_cast<double>(e);
      const double cx = x + box_w / 2;
      const char* color = detail::kPalette[e % std::size(detail::kPalette)];
      s += "<line x1=\"" + fixed(cx) + "\" y1=\"" + fixed(ypos(q.hi)) + "\" x2=\"" + fixed(cx) + "\" y2=\"" +
           fixed(ypos(q.lo)) + "\" stroke=\"black\"/>\n";
      s += "<rect x=\"" + fixed(x + 2) + "\" y=\"" + fixed(ypos(q.q3)) + "\" width=\"" + fixed(box_w - 4) +
           "\" height=\"" + fixed(std::max(1.0, ypos(q.q1) - ypos(q.q3))) + "\" fill=\"" + color +
           "\" stroke=\"black\"/>\n";
      s += "<line x1=\"" + fixed(x + 2) + "\" y1=\"" + fixed(ypos(q.median)) + "\" x2=\"" + fixed(x + box_w - 2) +
           "\" y2=\"" + fixed(ypos(q.median)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }
  }
  const double legend_x = width - 150.0;
  for (std::size_t e = 0; e < explainers.size(); ++e) {
    const double y = top + 18.0 * static_cast<double>(e);
    s += "<rect x=\"" + fixed(legend_x) + "\" y=\"" + fixed(y) + "\" width=\"12\" height=\"12\" fill=\"" +
         detail::kPalette[e % std::size(detail::kPalette)] + "\"/>\n";
    s += "<text x=\"" + fixed(legend_x + 18) + "\" y=\"" + fixed(y + 10) + "\">" + detail::escape(explainers[e]) +
         "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace crits::svg
