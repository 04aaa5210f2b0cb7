#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sing::harness {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Renders a line plot with markers, axes, ticks and a legend to a PNG.
/// Non-finite points are skipped.
void line_plot(const std::vector<Series>& series, const std::string& title,
               const std::string& x_label, const std::string& y_label,
               const std::filesystem::path& path, int width = 720, int height = 480);

}  // namespace sing::harness
