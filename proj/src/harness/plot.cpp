#include "sing/harness/plot.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace sing::harness {

namespace {

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44},
                               {40, 39, 214},  {189, 103, 148}, {75, 86, 140}};

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Roughly five round-numbered ticks covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) out.push_back(t);
  return out;
}

}  // namespace

void line_plot(const std::vector<Series>& series, const std::string& title,
               const std::string& x_label, const std::string& y_label,
               const std::filesystem::path& path, int width, int height) {
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (!std::isfinite(x_lo)) {
    x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  }
  if (x_hi - x_lo < 1e-12) x_lo -= 1.0, x_hi += 1.0;
  if (y_hi - y_lo < 1e-12) {
    const double pad = std::max(1e-3, std::abs(y_lo) * 0.05);
    y_lo -= pad, y_hi += pad;
  } else {
    const double pad = 0.08 * (y_hi - y_lo);
    y_lo -= pad, y_hi += pad;
  }

  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 80, right = width - 170, top = 56, bottom = height - 60;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (bottom - top))); };
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const cv::Scalar ink(40, 40, 40), grid(225, 225, 225);

  for (double t : ticks(x_lo, x_hi)) {
    cv::line(img, {px(t), top}, {px(t), bottom}, grid, 1);
    cv::putText(img, tick_label(t), {px(t) - 12, bottom + 20}, font, 0.45, ink, 1, cv::LINE_AA);
  }
  for (double t : ticks(y_lo, y_hi)) {
    cv::line(img, {left, py(t)}, {right, py(t)}, grid, 1);
    cv::putText(img, tick_label(t), {8, py(t) + 5}, font, 0.45, ink, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {left, top}, {right, bottom}, ink, 1);
  cv::putText(img, title, {left, 24}, font, 0.6, ink, 1, cv::LINE_AA);
  cv::putText(img, x_label, {(left + right) / 2 - 30, height - 18}, font, 0.5, ink, 1, cv::LINE_AA);
  cv::putText(img, y_label, {8, top - 10}, font, 0.45, ink, 1, cv::LINE_AA);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar colour = kPalette[k % std::size(kPalette)];
    std::vector<cv::Point> pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.emplace_back(px(s.x[i]), py(s.y[i]));
    }
    for (std::size_t i = 1; i < pts.size(); ++i) cv::line(img, pts[i - 1], pts[i], colour, 2, cv::LINE_AA);
    for (const auto& p : pts) cv::circle(img, p, 4, colour, cv::FILLED, cv::LINE_AA);
    const int ly = top + 20 + static_cast<int>(k) * 22;
    cv::line(img, {right + 15, ly - 4}, {right + 40, ly - 4}, colour, 2, cv::LINE_AA);
    cv::putText(img, s.label, {right + 46, ly}, font, 0.45, ink, 1, cv::LINE_AA);
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("failed to write " + path.string());
}

}  // namespace sing::harness
