#pragma once

#include <string>
#include <vector>

namespace trainspeed::svg {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

struct ChartOptions {
  std::string title;
  std::string x_label = "time (s)";
  std::string y_label;
  bool zero_line = false;
};

struct Chart {
  std::string markup;
  std::vector<std::string> warnings;
};

/// Static 1200x400 line chart with axes, ticks and a legend. Series with
/// fewer than two finite points are left out and reported in `warnings`.
Chart line_chart(const std::vector<Series>& series, const ChartOptions& options);

/// "Nice" tick positions covering [lo, hi], roughly `target` of them.
std::vector<double> ticks(double lo, double hi, int target = 6);

std::string escape(const std::string& text);

}  // namespace trainspeed::svg
