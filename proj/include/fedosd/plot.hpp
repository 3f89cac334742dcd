#pragma once

// Static SVG line charts of the per-round CSVs: ASR, mean R-Acc and
// distance to omega^0, one polyline per algorithm.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedosd/error.hpp"
#include "fedosd/metrics.hpp"

namespace fedosd {

struct Series {
  std::string label;
  std::vector<RoundRecord> records;  // pretrain rows already dropped
};

enum class PlotMetric { Asr, RAcc, Dist };

inline double metric_value(const RoundRecord& r, PlotMetric m) {
  switch (m) {
    case PlotMetric::Asr: return r.asr;
    case PlotMetric::RAcc: return r.r_acc_mean;
    case PlotMetric::Dist: return r.dist_origin;
  }
  return 0.0;
}

namespace detail {

inline std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace detail

/// Renders one chart. The dashed vertical line sits at the first
/// post-training round of the first series that has one.
inline std::string render_svg(const std::vector<Series>& series, PlotMetric metric, const std::string& title) {
  const double W = 640, H = 400, L = 60, R = 140, T = 40, B = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 0.0, y1 = metric == PlotMetric::Dist ? 0.0 : 1.0;
  double boundary = -1.0;
  for (const auto& s : series)
    for (const auto& r : s.records) {
      x0 = std::min(x0, static_cast<double>(r.round));
      x1 = std::max(x1, static_cast<double>(r.round));
      y1 = std::max(y1, metric_value(r, metric));
      if (boundary < 0 && r.stage == Stage::PostTrain) boundary = static_cast<double>(r.round);
    }
  if (x0 > x1) x0 = 0, x1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  o += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  o += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + title +
       "</text>\n";
  o += "<line x1=\"" + detail::fmt3(L) + "\" y1=\"" + detail::fmt3(H - B) + "\" x2=\"" + detail::fmt3(W - R) +
       "\" y2=\"" + detail::fmt3(H - B) + "\" stroke=\"black\"/>\n";
  o += "<line x1=\"" + detail::fmt3(L) + "\" y1=\"" + detail::fmt3(T) + "\" x2=\"" + detail::fmt3(L) + "\" y2=\"" +
       detail::fmt3(H - B) + "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = y0 + (y1 - y0) * k / 4.0;
    o += "<text x=\"" + detail::fmt3(L - 6) + "\" y=\"" + detail::fmt3(py(y) + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + detail::fmt3(y) + "</text>\n";
  }
  o += "<text x=\"" + detail::fmt3(L) + "\" y=\"" + detail::fmt3(H - B + 16) +
       "\" font-family=\"sans-serif\" font-size=\"10\">" + detail::fmt3(x0) + "</text>\n";
  o += "<text x=\"" + detail::fmt3(W - R) + "\" y=\"" + detail::fmt3(H - B + 16) +
       "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + detail::fmt3(x1) + "</text>\n";
  o += "<text x=\"" + detail::fmt3((L + W - R) / 2) + "\" y=\"" + detail::fmt3(H - 12) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">round</text>\n";
  if (boundary >= 0) {
    o += "<line class=\"stage-boundary\" x1=\"" + detail::fmt3(px(boundary)) + "\" y1=\"" + detail::fmt3(T) +
         "\" x2=\"" + detail::fmt3(px(boundary)) + "\" y2=\"" + detail::fmt3(H - B) +
         "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  std::size_t idx = 0;
  for (const auto& s : series) {
    const char* color = detail::kPalette[idx % std::size(detail::kPalette)];
    std::string pts;
    for (const auto& r : s.records) {
      if (!pts.empty()) pts += ' ';
      pts += detail::fmt3(px(static_cast<double>(r.round))) + "," + detail::fmt3(py(metric_value(r, metric)));
    }
    o += "<polyline data-series=\"" + s.label + "\" fill=\"none\" stroke=\"" + color +
         "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = T + 14.0 * static_cast<double>(idx);
    o += "<line x1=\"" + detail::fmt3(W - R + 10) + "\" y1=\"" + detail::fmt3(ly) + "\" x2=\"" +
         detail::fmt3(W - R + 28) + "\" y2=\"" + detail::fmt3(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + detail::fmt3(W - R + 32) + "\" y=\"" + detail::fmt3(ly + 4) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + s.label + "</text>\n";
    ++idx;
  }
  o += "</svg>\n";
  return o;
}

/// Collects <dir>/<algorithm>/<seed>/records.csv, in sorted path order.
/// Labels are "<algorithm>" when a single seed is present, else "<algorithm>/<seed>".
inline std::vector<Series> collect_series(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, std::vector<RoundRecord>> found;
  std::map<std::string, int> seeds_per_alg;
  for (const auto& alg : fs::directory_iterator(dir)) {
    if (!alg.is_directory()) continue;
    for (const auto& seed : fs::directory_iterator(alg.path())) {
      const fs::path csv = seed.path() / "records.csv";
      if (!fs::is_regular_file(csv)) continue;
      const std::string a = alg.path().filename().string();
      found[a + "/" + seed.path().filename().string()] = read_records(csv.string());
      seeds_per_alg[a] += 1;
    }
  }
  std::vector<Series> out;
  for (auto& [key, recs] : found) {
    const std::string alg = key.substr(0, key.find('/'));
    Series s{seeds_per_alg[alg] > 1 ? key : alg, {}};
    for (auto& r : recs)
      if (r.stage != Stage::Pretrain) s.records.push_back(r);
    out.push_back(std::move(s));
  }
  return out;
}

/// Writes asr.svg, racc.svg and dist.svg into `dir`. Returns the paths written.
inline std::vector<std::string> emit_plots(const std::filesystem::path& dir) {
  const auto series = collect_series(dir);
  if (series.empty()) throw IoError("no records.csv found under " + dir.string());
  const std::pair<PlotMetric, const char*> charts[] = {
      {PlotMetric::Asr, "asr"}, {PlotMetric::RAcc, "racc"}, {PlotMetric::Dist, "dist"}};
  const char* titles[] = {"Attack success rate", "Mean remaining-client accuracy", "Distance to omega^0"};
  std::vector<std::string> written;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string path = (dir / (std::string(charts[k].second) + ".svg")).string();
    write_text_file(path, render_svg(series, charts[k].first, titles[k]));
    written.push_back(path);
  }
  return written;
}

}  // namespace fedosd
