#include "sing/harness/dataset.hpp"

#include "sing/layers.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fs = std::filesystem;

namespace sing::harness {

SplitCounts split_counts(std::size_t n, const std::vector<double>& ratios) {
  if (ratios.size() != 3) throw ConfigError("split needs three ratios");
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0.0)) throw ConfigError("split ratios must not all be zero");
  SplitCounts c;
  // the epsilon keeps exact ratios such as 100 * 8/10 from flooring to 79
  c.train = static_cast<std::size_t>(std::floor(n * ratios[0] / total + 1e-9));
  c.val = static_cast<std::size_t>(std::floor(n * ratios[1] / total + 1e-9));
  c.test = n - c.train - c.val;
  return c;
}

std::vector<Tensor<float>> Dataset::gather(const std::vector<std::size_t>& idx) const {
  std::vector<Tensor<float>> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(images.at(i));
  return out;
}

namespace {

Tensor<float> from_mat(const cv::Mat& rgb_float) {
  const int h = rgb_float.rows;
  const int w = rgb_float.cols;
  Tensor<float> t({1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    const auto* row = rgb_float.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) t(0, c, y, x) = row[x][c];
    }
  }
  return t;
}

cv::Mat preprocess(const cv::Mat& bgr, int size) {
  const double scale = static_cast<double>(size) / std::min(bgr.rows, bgr.cols);
  const int w = std::max(size, static_cast<int>(std::lround(bgr.cols * scale)));
  const int h = std::max(size, static_cast<int>(std::lround(bgr.rows * scale)));
  cv::Mat resized;
  cv::resize(bgr, resized, {w, h}, 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_CUBIC);
  const cv::Rect crop((w - size) / 2, (h - size) / 2, size, size);
  cv::Mat rgb;
  cv::cvtColor(resized(crop), rgb, cv::COLOR_BGR2RGB);
  cv::Mat out;
  rgb.convertTo(out, CV_32FC3, 1.0 / 255.0);
  return out;
}

}  // namespace

Tensor<float> load_image(const fs::path& path, int size) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IngestError("cannot decode image " + path.string(), {path.filename().string()});
  }
  return from_mat(preprocess(bgr, size));
}

Dataset ingest(const fs::path& dir, int size, const std::vector<double>& ratios,
               std::uint64_t seed) {
  if (!fs::is_directory(dir)) throw IngestError("dataset folder " + dir.string() + " not found", {});
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (!name.empty() && name[0] == '.') continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IngestError("dataset folder " + dir.string() + " is empty", {});

  Dataset data;
  std::vector<std::string> bad;
  for (const auto& f : files) {
    const cv::Mat bgr = cv::imread(f.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
      bad.push_back(f.filename().string());
      continue;
    }
    data.names.push_back(f.filename().string());
    data.images.push_back(from_mat(preprocess(bgr, size)));
  }
  if (!bad.empty()) {
    std::string msg = "could not decode " + std::to_string(bad.size()) + " file(s) in " +
                      dir.string() + ":";
    for (const auto& b : bad) msg += " " + b;
    throw IngestError(msg, bad);
  }

  // Fisher-Yates on raw engine output, so the split does not depend on the
  // standard library's distribution implementations.
  std::vector<std::size_t> order(data.images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  const auto counts = split_counts(order.size(), ratios);
  data.train.assign(order.begin(), order.begin() + counts.train);
  data.val.assign(order.begin() + counts.train, order.begin() + counts.train + counts.val);
  data.test.assign(order.begin() + counts.train + counts.val, order.end());
  return data;
}

void write_split_files(const Dataset& data, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto write = [&](const char* name, const std::vector<std::size_t>& idx) {
    std::ofstream out(out_dir / name);
    for (std::size_t i : idx) out << data.names[i] << "\n";
    if (!out) throw std::runtime_error("failed to write " + (out_dir / name).string());
  };
  write("train.txt", data.train);
  write("val.txt", data.val);
  write("test.txt", data.test);
}

void save_png(const Tensor<float>& image, const fs::path& path) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 3 && s.c != 1)) {
    throw ConfigError("save_png expects (1, 3, H, W) or (1, 1, H, W), got " + s.str());
  }
  cv::Mat out(s.h, s.w, s.c == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < s.h; ++y) {
    auto* row = out.ptr<unsigned char>(y);
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < s.c; ++c) {
        const float v = std::clamp(image(0, c, y, x), 0.0f, 1.0f);
        // OpenCV stores BGR
        const int dst = s.c == 3 ? 2 - c : 0;
        row[x * s.c + dst] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw std::runtime_error("failed to write " + path.string());
}

namespace {

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double u(double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng_() >> 11) * 0x1.0p-53); }
  cv::Scalar colour(cv::Scalar base, double jitter) {
    return {std::clamp(base[0] + u(-jitter, jitter), 0.0, 255.0),
            std::clamp(base[1] + u(-jitter, jitter), 0.0, 255.0),
            std::clamp(base[2] + u(-jitter, jitter), 0.0, 255.0)};
  }

 private:
  Rng rng_;
};

cv::Mat draw_face(int size, std::uint64_t seed) {
  Draw d(seed);
  const int big = size * 4;  // supersampled, then area-averaged
  const double k = big / 64.0;
  cv::Mat img(big, big, CV_8UC3);

  const cv::Scalar top = d.colour({150, 140, 130}, 90);
  const cv::Scalar bottom = d.colour({90, 90, 100}, 70);
  for (int y = 0; y < big; ++y) {
    const double a = static_cast<double>(y) / big;
    img.row(y).setTo(top * (1.0 - a) + bottom * a);
  }

  const cv::Point centre(static_cast<int>(d.u(28, 36) * k), static_cast<int>(d.u(30, 36) * k));
  const cv::Size face_axes(static_cast<int>(d.u(15, 20) * k), static_cast<int>(d.u(19, 24) * k));
  const double tilt = d.u(-12, 12);
  const double tone = d.u(0, 1);
  const cv::Scalar skin =
      d.colour(cv::Scalar(90, 120, 170) * (1.0 - tone) + cv::Scalar(150, 180, 225) * tone, 12);
  const cv::Scalar hair = d.colour({40, 50, 70}, 35);

  // hair behind the face, neck and shoulders
  cv::ellipse(img, centre - cv::Point(0, static_cast<int>(4 * k)),
              face_axes + cv::Size(static_cast<int>(3 * k), static_cast<int>(3 * k)), tilt, 0, 360,
              hair, cv::FILLED, cv::LINE_AA);
  cv::rectangle(img, {centre.x - static_cast<int>(7 * k), centre.y},
                {centre.x + static_cast<int>(7 * k), big}, skin * 0.85, cv::FILLED);
  cv::ellipse(img, {centre.x, big + static_cast<int>(4 * k)},
              {static_cast<int>(d.u(24, 32) * k), static_cast<int>(14 * k)}, 0, 0, 360,
              d.colour({120, 80, 60}, 60), cv::FILLED, cv::LINE_AA);
  cv::ellipse(img, centre, face_axes, tilt, 0, 360, skin, cv::FILLED, cv::LINE_AA);
  // fringe
  cv::ellipse(img, centre - cv::Point(0, static_cast<int>(d.u(13, 17) * k)),
              {face_axes.width, static_cast<int>(d.u(5, 9) * k)}, tilt, 180, 360, hair, cv::FILLED,
              cv::LINE_AA);

  const double eye_dx = d.u(6, 8) * k;
  const double eye_y = centre.y - d.u(2, 5) * k;
  const cv::Scalar iris = d.colour({60, 70, 60}, 40);
  for (int side : {-1, 1}) {
    const cv::Point eye(static_cast<int>(centre.x + side * eye_dx), static_cast<int>(eye_y));
    cv::ellipse(img, eye, {static_cast<int>(3.2 * k), static_cast<int>(1.8 * k)}, tilt, 0, 360,
                {235, 235, 235}, cv::FILLED, cv::LINE_AA);
    cv::circle(img, eye, static_cast<int>(1.4 * k), iris, cv::FILLED, cv::LINE_AA);
    cv::circle(img, eye, static_cast<int>(0.6 * k), {15, 15, 15}, cv::FILLED, cv::LINE_AA);
    const cv::Point brow = eye - cv::Point(0, static_cast<int>(d.u(3.5, 5) * k));
    cv::line(img, brow - cv::Point(static_cast<int>(3 * k), 0),
             brow + cv::Point(static_cast<int>(3 * k), static_cast<int>(side * d.u(-1, 1) * k)),
             hair, std::max(1, static_cast<int>(1.2 * k)), cv::LINE_AA);
  }
  cv::line(img, {centre.x, static_cast<int>(eye_y + 2 * k)},
           {centre.x + static_cast<int>(d.u(-1, 1) * k), static_cast<int>(centre.y + 4 * k)},
           skin * 0.75, std::max(1, static_cast<int>(0.9 * k)), cv::LINE_AA);
  const int smile = static_cast<int>(d.u(1.5, 4) * k);
  cv::ellipse(img, {centre.x, static_cast<int>(centre.y + d.u(9, 11) * k)},
              {static_cast<int>(d.u(4, 6) * k), smile}, tilt, 10, 170, d.colour({80, 80, 160}, 30),
              std::max(1, static_cast<int>(1.3 * k)), cv::LINE_AA);

  cv::Mat grain(big, big, CV_32FC3);
  cv::RNG(seed).fill(grain, cv::RNG::NORMAL, 0.0, 4.0);
  cv::Mat textured;
  img.convertTo(textured, CV_32FC3);
  textured += grain;
  textured.convertTo(img, CV_8UC3);
  cv::Mat out;
  cv::resize(img, out, {size, size}, 0, 0, cv::INTER_AREA);
  return out;
}

}  // namespace

void synthesize_faces(const fs::path& out_dir, int count, int size, std::uint64_t seed) {
  if (count < 1 || size < 8) throw ConfigError("synthesize_faces needs count >= 1 and size >= 8");
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "face_%05d.png", i);
    const cv::Mat img = draw_face(size, seed * 1000003ULL + static_cast<std::uint64_t>(i));
    if (!cv::imwrite((out_dir / name).string(), img)) {
      throw std::runtime_error("failed to write " + (out_dir / name).string());
    }
  }
}

Tensor<float> stack(const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw ConfigError("stack of zero images");
  const Shape one = images.front().shape();
  Tensor<float> out({static_cast<int>(images.size()), one.c, one.h, one.w});
  const Eigen::Index n = one.sample();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != one) throw ConfigError("stack: mismatched image shapes");
    out.array().segment(static_cast<Eigen::Index>(i) * n, n) = images[i].array();
  }
  return out;
}

}  // namespace sing::harness
