#pragma once

#include "sing/harness/checkpoint.hpp"
#include "sing/harness/config.hpp"
#include "sing/harness/dataset.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace sing::harness {

inline constexpr const char* kSoftwareName = "sing";
inline constexpr const char* kSoftwareVersion = "0.1.0";

/// Loads and splits `config.dataset_dir`.
[[nodiscard]] Dataset load_dataset(const ExperimentConfig& config);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::vector<double> losses;
};

/// Trains one stage (jscc, ddpm or inn) on the training split and writes its
/// checkpoint plus a per-step loss CSV. The inn stage needs the jscc
/// checkpoint and throws DependencyError without it. `progress` receives a
/// line every `report_every` steps when non-null.
TrainResult train_stage(const std::string& stage, const ExperimentConfig& config,
                        const Dataset& data, std::ostream* progress = nullptr,
                        int report_every = 50);

/// One scored (method, snr, image) evaluation cell.
struct CellRecord {
  std::string method;
  double bcr = 0.0;
  double snr_db = 0.0;
  double sigma_sq = 0.0;
  std::size_t image = 0;  // position in the evaluated test list
  std::string image_name;
  std::uint64_t seed = 0;
  double psnr_db = 0.0;
  double perceptual = 0.0;
  /// ||A x_hat - y||_inf after the final projection; NaN for deepjscc.
  double consistency = 0.0;
  double zeta = 0.0;
  std::vector<std::string> warnings;
};

struct Aggregate {
  std::string method;
  double snr_db = 0.0;
  std::size_t count = 0;
  double psnr_db = 0.0;
  double perceptual = 0.0;
};

struct EvaluationResult {
  std::vector<CellRecord> records;
  std::vector<Aggregate> aggregates;
  double baseline_psnr_db = 0.0;  // dataset-mean image against the test images
  double wall_seconds = 0.0;
  std::filesystem::path out_dir;
};

/// Largest tolerated ||A x_hat - y||_inf for the SING methods.
inline constexpr double kConsistencyTolerance = 1e-4;

/// Runs every (snr, image, method) cell and writes metrics.csv, summary.csv,
/// manifest.json, timing.json and the two metric-vs-SNR plots into
/// <output_dir>/eval. Throws DependencyError for missing checkpoints and
/// std::runtime_error if a SING output violates consistency.
EvaluationResult evaluate(const ExperimentConfig& config, const Dataset& data,
                          std::ostream* progress = nullptr);

/// Mixes a base seed with cell coordinates (splitmix64 finalizer).
[[nodiscard]] std::uint64_t cell_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b);

}  // namespace sing::harness
