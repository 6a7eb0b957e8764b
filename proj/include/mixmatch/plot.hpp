#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mixmatch {

struct CurveSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // sorted by x
};

/// Reads "alpha,index_source,miou[,...]" rows into one series per source.
std::vector<CurveSeries> parse_curve_csv(const std::string& text);

/// Self-contained SVG line chart, one polyline per series.
std::string render_svg(const std::vector<CurveSeries>& series, const std::string& x_label,
                       const std::string& y_label);

void emit_plot(const std::filesystem::path& curve_csv, const std::filesystem::path& out_path);

}  // namespace mixmatch
