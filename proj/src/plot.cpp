#include "mixmatch/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mixmatch/error.hpp"

namespace mixmatch {
namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 420;
constexpr double kLeft = 70;
constexpr double kRight = 150;
constexpr double kTop = 30;
constexpr double kBottom = 60;
constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c",
                                                "#9467bd", "#ff7f0e", "#8c564b"};

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double to_number(const std::string& cell, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size() || !std::isfinite(v)) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw FormatError("curve CSV line " + std::to_string(line_no) + ": '" + cell +
                      "' is not a finite number");
  }
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::vector<CurveSeries> parse_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) {
      header = split_row(line);
      break;
    }
  }
  if (header.empty()) throw FormatError("curve CSV is empty");
  const auto column = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(std::string("curve CSV lacks a '") + name + "' column");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_alpha = column("alpha");
  const std::size_t c_source = column("index_source");
  const std::size_t c_miou = column("miou");

  std::vector<CurveSeries> series;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw FormatError("curve CSV line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    }
    const double x = to_number(cells[c_alpha], line_no);
    const double y = to_number(cells[c_miou], line_no);
    const std::string& label = cells[c_source];
    auto it = std::find_if(series.begin(), series.end(),
                           [&](const CurveSeries& s) { return s.label == label; });
    if (it == series.end()) {
      series.push_back({label, {}});
      it = series.end() - 1;
    }
    it->points.emplace_back(x, y);
  }
  if (series.empty()) throw FormatError("curve CSV has no data rows");
  for (auto& s : series) std::stable_sort(s.points.begin(), s.points.end());
  return series;
}

std::string render_svg(const std::vector<CurveSeries>& series, const std::string& x_label,
                       const std::string& y_label) {
  if (series.empty()) throw FormatError("nothing to plot");
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 - x0 < 1e-12) { x0 -= 0.5; x1 += 0.5; }
  const double pad = std::max((y1 - y0) * 0.1, 1e-3);
  y0 -= pad;
  y1 += pad;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * plot_w; };
  const auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * plot_h; };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  svg << "<g stroke=\"black\" stroke-width=\"1\">\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop + plot_h << "\"/>\n</g>\n";
  svg << "<g fill=\"black\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0;
    const double yv = y0 + (y1 - y0) * i / 5.0;
    svg << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + plot_h + 18)
        << "\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
    svg << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(py(yv) + 4)
        << "\" text-anchor=\"end\">" << tick(yv) << "</text>\n";
  }
  svg << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kHeight - 15)
      << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << num(kTop + plot_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << num(kTop + plot_h / 2) << ")\">" << escape(y_label) << "</text>\n</g>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % kColors.size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[k].points.size(); ++i) {
      const auto& [x, y] = series[k].points[i];
      svg << (i ? " " : "") << num(px(x)) << ',' << num(py(y));
    }
    svg << "\"/>\n";
    const double ly = kTop + 20 + 20.0 * static_cast<double>(k);
    svg << "<line x1=\"" << num(kLeft + plot_w + 15) << "\" y1=\"" << num(ly) << "\" x2=\""
        << num(kLeft + plot_w + 40) << "\" y2=\"" << num(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << num(kLeft + plot_w + 46) << "\" y=\"" << num(ly + 4) << "\">"
        << escape(series[k].label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_plot(const std::filesystem::path& curve_csv, const std::filesystem::path& out_path) {
  std::ifstream in(curve_csv);
  if (!in) throw FormatError("cannot open " + curve_csv.string());
  std::stringstream text;
  text << in.rdbuf();
  const auto series = parse_curve_csv(text.str());
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + out_path.string());
  out << render_svg(series, "alpha (depth weight)", "mIoU");
}

}  // namespace mixmatch
