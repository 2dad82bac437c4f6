#pragma once

#include <string>
#include <vector>

namespace diffdet::svgplot {

struct Series {
  std::string label;
  std::string color = "#1f77b4";
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal line chart as a standalone SVG file. NaN-free inputs expected;
/// empty series are skipped.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, const std::string& comment = "");

}  // namespace diffdet::svgplot
