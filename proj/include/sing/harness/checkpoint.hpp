#pragma once

#include "sing/harness/config.hpp"

#include <filesystem>
#include <string>

namespace sing::harness {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "sing-checkpoint";

/// Self-describing checkpoint: architecture config, its hash, free-form
/// metadata and every named parameter tensor.
struct Checkpoint {
  std::string kind;  // jscc, ddpm or inn
  json config;
  json metadata = json::object();
  ParameterList<float>::State parameters;

  void save(const std::filesystem::path& path) const;
  /// Verifies format, version, kind and config hash.
  [[nodiscard]] static Checkpoint load(const std::filesystem::path& path,
                                       const std::string& expected_kind);
};

[[nodiscard]] json to_json(const JsccConfig& c);
[[nodiscard]] JsccConfig jscc_config_from_json(const json& j);
[[nodiscard]] json to_json(const DenoiserConfig& c, int diffusion_steps);
[[nodiscard]] DenoiserConfig denoiser_config_from_json(const json& j);
[[nodiscard]] json to_json(const CondInnConfig& c);
[[nodiscard]] CondInnConfig inn_config_from_json(const json& j);

[[nodiscard]] Checkpoint make_checkpoint(const JsccModel<float>& model, json metadata = json::object());
[[nodiscard]] Checkpoint make_checkpoint(const Denoiser<float>& model, int diffusion_steps,
                                         json metadata = json::object());
[[nodiscard]] Checkpoint make_checkpoint(const CondInn<float>& model, json metadata = json::object());

[[nodiscard]] JsccModel<float> load_jscc(const Checkpoint& ckpt);
/// The diffusion step count the denoiser was trained with is returned in `diffusion_steps`.
[[nodiscard]] Denoiser<float> load_denoiser(const Checkpoint& ckpt, int* diffusion_steps = nullptr);
[[nodiscard]] CondInn<float> load_inn(const Checkpoint& ckpt);

}  // namespace sing::harness
