#include "sing/harness/checkpoint.hpp"

#include <fstream>

namespace fs = std::filesystem;

namespace sing::harness {

namespace {

json tensor_to_json(const Tensor<float>& t) {
  const Shape s = t.shape();
  json data = json::array();
  for (Eigen::Index i = 0; i < t.size(); ++i) data.push_back(t.array()[i]);
  return {{"shape", {s.n, s.c, s.h, s.w}}, {"data", std::move(data)}};
}

Tensor<float> tensor_from_json(const json& j, const std::string& name) {
  const auto dims = j.at("shape").get<std::vector<int>>();
  if (dims.size() != 4) throw ConfigError("parameter '" + name + "' needs a 4-d shape");
  Tensor<float> t({dims[0], dims[1], dims[2], dims[3]});
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != t.size()) {
    throw ConfigError("parameter '" + name + "' has " + std::to_string(data.size()) +
                      " values for shape " + t.shape().str());
  }
  for (Eigen::Index i = 0; i < t.size(); ++i) t.array()[i] = data[i].get<float>();
  return t;
}

template <typename Model>
void install(const Model& model, const Checkpoint& ckpt) {
  auto params = model.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw ConfigError(ckpt.kind + " checkpoint holds " + std::to_string(ckpt.parameters.size()) +
                      " tensors, the model expects " + std::to_string(params.size()));
  }
  params.load(ckpt.parameters);
}

}  // namespace

void Checkpoint::save(const fs::path& path) const {
  json params = json::object();
  for (const auto& [name, t] : parameters) params[name] = tensor_to_json(t);
  const json doc = {{"format", kCheckpointFormat},
                    {"version", kCheckpointVersion},
                    {"kind", kind},
                    {"config", config},
                    {"config_hash", config_hash(config)},
                    {"metadata", metadata},
                    {"parameters", std::move(params)}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << doc.dump() << "\n";
  if (!out) throw std::runtime_error("failed to write checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const fs::path& path, const std::string& expected_kind) {
  std::ifstream in(path);
  if (!in) {
    throw DependencyError(expected_kind, "missing " + expected_kind + " checkpoint " +
                                             path.string() + " (run `train " + expected_kind +
                                             "` first)");
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (doc.value("format", "") != kCheckpointFormat) {
    throw ConfigError(path.string() + " is not a checkpoint file");
  }
  if (doc.value("version", -1) != kCheckpointVersion) {
    throw ConfigError("checkpoint " + path.string() + " has unsupported version " +
                      doc.value("version", json(nullptr)).dump());
  }
  Checkpoint ckpt;
  ckpt.kind = doc.at("kind").get<std::string>();
  if (ckpt.kind != expected_kind) {
    throw ConfigError("checkpoint " + path.string() + " holds a " + ckpt.kind + " model, expected " +
                      expected_kind);
  }
  ckpt.config = doc.at("config");
  if (doc.at("config_hash").get<std::string>() != config_hash(ckpt.config)) {
    throw ConfigError("checkpoint " + path.string() + " config hash does not match its config");
  }
  ckpt.metadata = doc.value("metadata", json::object());
  for (const auto& [name, t] : doc.at("parameters").items()) {
    ckpt.parameters.emplace(name, tensor_from_json(t, name));
  }
  return ckpt;
}

json to_json(const JsccConfig& c) {
  return {{"height", c.height},           {"width", c.width},
          {"channels", c.channels},       {"bcr", c.bcr},
          {"filters", c.filters},         {"stages", c.stages},
          {"lambda_perceptual", c.lambda_perceptual},
          {"avg_power", c.avg_power},     {"snr_side_input", c.snr_side_input}};
}

JsccConfig jscc_config_from_json(const json& j) {
  JsccConfig c;
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.bcr = j.at("bcr").get<double>();
  c.filters = j.at("filters").get<int>();
  c.stages = j.at("stages").get<int>();
  c.lambda_perceptual = j.at("lambda_perceptual").get<double>();
  c.avg_power = j.at("avg_power").get<double>();
  c.snr_side_input = j.at("snr_side_input").get<bool>();
  c.validate();
  return c;
}

json to_json(const DenoiserConfig& c, int diffusion_steps) {
  return {{"channels", c.channels},
          {"width", c.width},
          {"time_dim", c.time_dim},
          {"output_gain", c.output_gain},
          {"diffusion_steps", diffusion_steps}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  c.channels = j.at("channels").get<int>();
  c.width = j.at("width").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.output_gain = j.at("output_gain").get<double>();
  return c;
}

json to_json(const CondInnConfig& c) {
  return {{"channels", c.channels}, {"scale", c.scale},   {"hidden", c.hidden},
          {"pairs", c.pairs},       {"blocks", c.blocks}, {"output_gain", c.output_gain}};
}

CondInnConfig inn_config_from_json(const json& j) {
  CondInnConfig c;
  c.channels = j.at("channels").get<int>();
  c.scale = j.at("scale").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.pairs = j.at("pairs").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.output_gain = j.at("output_gain").get<double>();
  c.validate();
  return c;
}

Checkpoint make_checkpoint(const JsccModel<float>& model, json metadata) {
  metadata["trained_snr_low_db"] = model.trained_snr_low_db;
  metadata["trained_snr_high_db"] = model.trained_snr_high_db;
  return {"jscc", to_json(model.config()), std::move(metadata), model.parameters().state()};
}

Checkpoint make_checkpoint(const Denoiser<float>& model, int diffusion_steps, json metadata) {
  return {"ddpm", to_json(model.config(), diffusion_steps), std::move(metadata),
          model.parameters().state()};
}

Checkpoint make_checkpoint(const CondInn<float>& model, json metadata) {
  metadata["trained_snr_low_db"] = model.trained_snr_low_db;
  metadata["trained_snr_high_db"] = model.trained_snr_high_db;
  return {"inn", to_json(model.config()), std::move(metadata), model.parameters().state()};
}

JsccModel<float> load_jscc(const Checkpoint& ckpt) {
  JsccModel<float> model(jscc_config_from_json(ckpt.config), 0);
  install(model, ckpt);
  model.trained_snr_low_db = ckpt.metadata.at("trained_snr_low_db").get<double>();
  model.trained_snr_high_db = ckpt.metadata.at("trained_snr_high_db").get<double>();
  return model;
}

Denoiser<float> load_denoiser(const Checkpoint& ckpt, int* diffusion_steps) {
  Denoiser<float> model(denoiser_config_from_json(ckpt.config), 0);
  install(model, ckpt);
  if (diffusion_steps != nullptr) *diffusion_steps = ckpt.config.at("diffusion_steps").get<int>();
  return model;
}

CondInn<float> load_inn(const Checkpoint& ckpt) {
  CondInn<float> model(inn_config_from_json(ckpt.config), 0);
  install(model, ckpt);
  model.trained_snr_low_db = ckpt.metadata.at("trained_snr_low_db").get<double>();
  model.trained_snr_high_db = ckpt.metadata.at("trained_snr_high_db").get<double>();
  return model;
}

}  // namespace sing::harness
