#include "svq/plot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "svq/util.hpp"

namespace svq {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

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

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

std::string render_metrics_svg(const MetricsLog& log, const std::string& title, const PlotOptions& options) {
  const double w = static_cast<double>(options.width), h = static_cast<double>(options.height);
  const double left = 60, right = 150, top = 30, bottom = 40;
  const double pw = w - left - right, ph = h - top - bottom;

  std::vector<std::vector<double>> series;
  double ymax = 0.0;
  for (const auto& c : log.columns()) {
    auto ys = moving_average(log.column(c), std::max<std::size_t>(1, options.smoothing));
    for (double y : ys) {
      if (std::isfinite(y)) ymax = std::max(ymax, y);
    }
    series.push_back(std::move(ys));
  }
  if (ymax <= 0.0) ymax = 1.0;
  const double xmin = log.size() ? static_cast<double>(log.steps().front()) : 0.0;
  const double xmax = log.size() > 1 ? static_cast<double>(log.steps().back()) : xmin + 1.0;
  const auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  const auto sy = [&](double y) { return top + (1.0 - y / ymax) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\"" << options.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-size=\"14\">" << escape(title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymax * i / 4.0;
    os << "<line x1=\"" << left - 4 << "\" x2=\"" << left << "\" y1=\"" << fixed(sy(y), 1) << "\" y2=\""
       << fixed(sy(y), 1) << "\" stroke=\"#444\"/>";
    os << "<text x=\"" << left - 6 << "\" y=\"" << fixed(sy(y) + 4, 1) << "\" text-anchor=\"end\">" << fixed(y, 3)
       << "</text>\n";
    const double x = xmin + (xmax - xmin) * i / 4.0;
    os << "<text x=\"" << fixed(sx(x), 1) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
       << static_cast<long>(std::llround(x)) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 6 << "\" text-anchor=\"middle\">step</text>\n";
  for (std::size_t c = 0; c < series.size(); ++c) {
    const char* color = kPalette[c % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[c].size(); ++i) {
      if (!std::isfinite(series[c][i])) continue;
      os << fixed(sx(static_cast<double>(log.steps()[i])), 2) << ',' << fixed(sy(series[c][i]), 2) << ' ';
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(c);
    os << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly - 4 << "\" y2=\""
       << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>";
    os << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << escape(log.columns()[c]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace svq
