#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dsinit/harness.hpp"

namespace dsinit::harness {

namespace {

constexpr double kWidth = 640;
constexpr double kHeight = 320;
constexpr double kLeft = 64, kRight = 170, kTop = 36, kBottom = 44;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s.precision(6);
  s << v;
  return s.str();
}

void render_chart(std::ostringstream& out, const Chart& chart, double y0) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : chart.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return y0 + kTop + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  out << "<text x=\"" << num(kLeft) << "\" y=\"" << num(y0 + 22) << "\" font-size=\"15\">" << escape(chart.title)
      << "</text>\n";
  out << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(y0 + kTop) << "\" width=\"" << num(pw) << "\" height=\""
      << num(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    out << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(yv) + 4)
        << "\" font-size=\"10\" text-anchor=\"end\">" << num(yv) << "</text>\n";
    out << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(y0 + kTop + ph + 14)
        << "\" font-size=\"10\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
  }
  out << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(y0 + kHeight - 8)
      << "\" font-size=\"11\" text-anchor=\"middle\">" << escape(chart.x_label) << "</text>\n";
  out << "<text x=\"14\" y=\"" << num(y0 + kTop + ph / 2) << "\" font-size=\"11\" transform=\"rotate(-90 14 "
      << num(y0 + kTop + ph / 2) << ")\" text-anchor=\"middle\">" << escape(chart.y_label) << "</text>\n";

  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const Series& s = chart.series[si];
    const char* colour = kPalette[si % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      out << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
    }
    out << "\"/>\n";
    const double ly = y0 + kTop + 14 + 16 * static_cast<double>(si);
    out << "<line x1=\"" << num(kWidth - kRight + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
        << num(kWidth - kRight + 28) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << colour
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << num(kWidth - kRight + 32) << "\" y=\"" << num(ly) << "\" font-size=\"11\">"
        << escape(s.name) << "</text>\n";
  }
}

}  // namespace

std::string render_svg(const std::vector<Chart>& charts) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  const double total = kHeight * static_cast<double>(std::max<std::size_t>(charts.size(), 1));
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(total)
      << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(total) << "\" font-family=\"sans-serif\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < charts.size(); ++i) render_chart(out, charts[i], kHeight * static_cast<double>(i));
  out << "</svg>\n";
  return out.str();
}

void write_svg(const std::vector<Chart>& charts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << render_svg(charts);
}

}  // namespace dsinit::harness
