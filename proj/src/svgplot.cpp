#include "diffdet/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace diffdet::svgplot {

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}
}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, const std::string& comment) {
  const double w = 720, h = 440, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const Series& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write svg: " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  if (!comment.empty()) os << "<!-- " << comment << " -->\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
     << "</text>\n";

  // axes with 5 ticks each
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
     << h - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double xv = xmin + (xmax - xmin) * i / 5.0;
    double yv = ymin + (ymax - ymin) * i / 5.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 18
       << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(xv) << "</text>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(yv) << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << py(yv) << "\" x2=\"" << w - mr << "\" y2=\""
       << py(yv) << "\" stroke=\"#dddddd\"/>\n";
  }
  os << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  os << "<text x=\"16\" y=\"" << (mt + h - mb) / 2
     << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
     << (mt + h - mb) / 2 << ")\">" << y_label << "</text>\n";

  double ly = mt + 6;
  for (const Series& s : series) {
    if (s.x.empty()) continue;
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.7\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      os << fmt(px(s.x[i])) << "," << fmt(py(s.y[i])) << " ";
    os << "\"/>\n";
    os << "<rect x=\"" << w - mr - 150 << "\" y=\"" << ly - 9
       << "\" width=\"12\" height=\"12\" fill=\"" << s.color << "\"/>\n";
    os << "<text x=\"" << w - mr - 132 << "\" y=\"" << ly + 2 << "\" font-size=\"12\">" << s.label
       << "</text>\n";
    ly += 18;
  }
  os << "</svg>\n";
}

}  // namespace diffdet::svgplot
