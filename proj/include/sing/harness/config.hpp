#pragma once

#include "sing/cond_inn.hpp"
#include "sing/deepjscc.hpp"
#include "sing/diffusion.hpp"
#include "sing/sing_inn.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sing::harness {

using nlohmann::json;

/// A required checkpoint or pipeline stage is missing.
class DependencyError : public std::runtime_error {
 public:
  DependencyError(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)) {}
  [[nodiscard]] const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline constexpr int kConfigVersion = 1;

enum class Method { deepjscc, sing_zero, sing_inn };

[[nodiscard]] Method parse_method(const std::string& name);
[[nodiscard]] std::string to_string(Method method);

/// Flat experiment description. Every key is optional in the file except
/// `version`; unknown keys are rejected.
struct ExperimentConfig {
  int version = kConfigVersion;

  // data
  std::string dataset_dir;
  std::vector<double> split{8.0, 1.0, 1.0};
  int image_size = 64;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  // channel and evaluation grid
  double bcr = 0.0052;
  std::vector<double> snr_grid{-5.0, -3.0, -1.0, 1.0, 3.0, 5.0};
  std::vector<Method> methods{Method::deepjscc, Method::sing_zero, Method::sing_inn};
  int operator_scale = 2;
  int t_effective = 50;
  std::optional<double> zeta;  // unset: zeta_schedule(snr)
  GuidanceMode guidance = GuidanceMode::full;
  GuidanceScaling guidance_scaling = GuidanceScaling::raw;
  int eval_images = 0;  // 0: the whole test split
  int workers = 1;
  std::uint64_t perceptual_seed = 1234;

  // checkpoints; empty means <output_dir>/<stage>.ckpt.json
  std::string jscc_checkpoint;
  std::string ddpm_checkpoint;
  std::string inn_checkpoint;

  // DeepJSCC
  int jscc_filters = 32;
  int jscc_stages = 3;
  double jscc_lambda = 1.0;
  bool jscc_snr_side_input = false;
  int jscc_steps = 1000;
  int jscc_batch = 32;
  double jscc_lr = 1e-4;
  double train_snr_low = -5.0;
  double train_snr_high = 5.0;

  // denoiser
  int ddpm_width = 32;
  int ddpm_time_dim = 32;
  int diffusion_steps = NoiseSchedule::kDefaultSteps;
  int ddpm_steps = 2000;
  int ddpm_batch = 16;
  double ddpm_lr = 2e-4;

  // conditional INN
  int inn_hidden = 32;
  int inn_pairs = 4;
  int inn_blocks = 2;
  int inn_steps = 1000;
  int inn_batch = 32;
  double inn_lr = 5e-5;

  void validate() const;

  [[nodiscard]] JsccConfig jscc_config() const;
  [[nodiscard]] DenoiserConfig denoiser_config() const;
  [[nodiscard]] CondInnConfig inn_config() const;
  [[nodiscard]] LinearDegradation degradation() const;
  [[nodiscard]] NoiseSchedule schedule() const;

  [[nodiscard]] std::filesystem::path checkpoint_path(const std::string& stage) const;

  [[nodiscard]] json to_json() const;
  /// Throws ConfigError naming every unknown key and every ill-typed value.
  [[nodiscard]] static ExperimentConfig from_json(const json& doc);
};

[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// 64-bit FNV-1a over the bytes of a string, as 16 hex digits.
[[nodiscard]] std::string fnv1a_hex(const std::string& bytes);
/// Hash of the canonical (sorted-key, compact) serialization.
[[nodiscard]] std::string config_hash(const json& doc);

}  // namespace sing::harness
