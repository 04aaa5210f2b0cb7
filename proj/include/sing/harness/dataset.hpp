#pragma once

#include "sing/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sing::harness {

/// Dataset folder could not be ingested. `files()` lists the offending
/// entries (empty when the folder itself is missing or empty).
class IngestError : public std::runtime_error {
 public:
  IngestError(const std::string& what, std::vector<std::string> files)
      : std::runtime_error(what), files_(std::move(files)) {}
  [[nodiscard]] const std::vector<std::string>& files() const { return files_; }

 private:
  std::vector<std::string> files_;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// floor(n r_i / sum r) for train and validation; the test split takes the rest.
[[nodiscard]] SplitCounts split_counts(std::size_t n, const std::vector<double>& ratios);

struct Dataset {
  std::vector<std::string> names;      // file names relative to the folder
  std::vector<Tensor<float>> images;   // (1, 3, S, S) in [0, 1]
  std::vector<std::size_t> train, val, test;

  [[nodiscard]] std::vector<Tensor<float>> gather(const std::vector<std::size_t>& idx) const;
};

/// Decodes one image, resizes its shorter side to `size`, center-crops to
/// size x size and scales to [0, 1] RGB. Throws IngestError if undecodable.
[[nodiscard]] Tensor<float> load_image(const std::filesystem::path& path, int size);

/// Reads every regular file of `dir` in name order and splits the images with
/// a seeded shuffle.
[[nodiscard]] Dataset ingest(const std::filesystem::path& dir, int size,
                             const std::vector<double>& ratios, std::uint64_t seed);

/// Writes train.txt, val.txt and test.txt (one file name per line).
void write_split_files(const Dataset& data, const std::filesystem::path& out_dir);

/// Saves a (1, 3, H, W) or (1, 1, H, W) tensor in [0, 1] as an 8-bit PNG.
void save_png(const Tensor<float>& image, const std::filesystem::path& path);

/// Writes `count` procedurally drawn face-like PNGs (face_00000.png, ...).
void synthesize_faces(const std::filesystem::path& out_dir, int count, int size,
                      std::uint64_t seed);

/// Stacks (1, C, H, W) tensors into (N, C, H, W).
[[nodiscard]] Tensor<float> stack(const std::vector<Tensor<float>>& images);

}  // namespace sing::harness
