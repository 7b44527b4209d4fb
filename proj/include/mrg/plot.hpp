#pragma once

#include <string>
#include <vector>

namespace mrg {

struct Series {
  std::string name;
  std::vector<double> y;
};

// Minimal PNG line chart: one x axis shared by all series, tick labels in a
// tiny built-in bitmap font, one colored polyline with markers per series.
// Self-contained writer (stored-block deflate), no imaging dependency.
void write_line_chart(const std::string& path, const std::vector<double>& x,
                      const std::vector<Series>& series, const std::string& x_label,
                      int width = 640, int height = 420);

}  // namespace mrg
