#include "sing/harness/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sing::harness {

Method parse_method(const std::string& name) {
  if (name == "deepjscc") return Method::deepjscc;
  if (name == "sing_zero") return Method::sing_zero;
  if (name == "sing_inn") return Method::sing_inn;
  throw ConfigError("unknown method '" + name + "' (expected deepjscc, sing_zero or sing_inn)");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::deepjscc:
      return "deepjscc";
    case Method::sing_zero:
      return "sing_zero";
    case Method::sing_inn:
      return "sing_inn";
  }
  return "?";
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(version == kConfigVersion,
          "unsupported config version " + std::to_string(version) + " (expected " +
              std::to_string(kConfigVersion) + ")");
  require(split.size() == 3, "split must have three entries (train, val, test)");
  for (double r : split) require(r >= 0.0 && std::isfinite(r), "split ratios must be >= 0");
  require(split[0] > 0.0 && split[2] > 0.0, "train and test ratios must be positive");
  require(image_size >= 8, "image_size must be >= 8");
  require(!snr_grid.empty(), "snr_grid must not be empty");
  for (double s : snr_grid) require(std::isfinite(s), "snr_grid entries must be finite");
  require(!methods.empty(), "methods must not be empty");
  require(t_effective >= 1 && t_effective <= diffusion_steps,
          "t_effective must be in [1, diffusion_steps]");
  require(!zeta || (*zeta >= 0.0 && std::isfinite(*zeta)), "zeta must be >= 0");
  require(eval_images >= 0, "eval_images must be >= 0");
  require(workers >= 1, "workers must be >= 1");
  require(train_snr_low <= train_snr_high, "train_snr_low must not exceed train_snr_high");
  require(jscc_steps >= 0 && ddpm_steps >= 0 && inn_steps >= 0, "step counts must be >= 0");
  require(jscc_batch >= 1 && ddpm_batch >= 1 && inn_batch >= 1, "batch sizes must be >= 1");
  require(jscc_lr > 0.0 && ddpm_lr > 0.0 && inn_lr > 0.0, "learning rates must be positive");
  require(image_size % operator_scale == 0, "image_size must be divisible by operator_scale");
  jscc_config().validate();
  inn_config().validate();
  static_cast<void>(degradation());
}

JsccConfig ExperimentConfig::jscc_config() const {
  JsccConfig c;
  c.height = image_size;
  c.width = image_size;
  c.bcr = bcr;
  c.filters = jscc_filters;
  c.stages = jscc_stages;
  c.lambda_perceptual = jscc_lambda;
  c.snr_side_input = jscc_snr_side_input;
  return c;
}

DenoiserConfig ExperimentConfig::denoiser_config() const {
  DenoiserConfig c;
  c.width = ddpm_width;
  c.time_dim = ddpm_time_dim;
  return c;
}

CondInnConfig ExperimentConfig::inn_config() const {
  CondInnConfig c;
  c.scale = operator_scale;
  c.hidden = inn_hidden;
  c.pairs = inn_pairs;
  c.blocks = inn_blocks;
  return c;
}

LinearDegradation ExperimentConfig::degradation() const {
  return LinearDegradation::mean_pool(operator_scale);
}

NoiseSchedule ExperimentConfig::schedule() const { return NoiseSchedule::linear(diffusion_steps); }

std::filesystem::path ExperimentConfig::checkpoint_path(const std::string& stage) const {
  const std::string* explicit_path = nullptr;
  if (stage == "jscc") explicit_path = &jscc_checkpoint;
  if (stage == "ddpm") explicit_path = &ddpm_checkpoint;
  if (stage == "inn") explicit_path = &inn_checkpoint;
  if (explicit_path == nullptr) throw ConfigError("unknown stage '" + stage + "'");
  if (!explicit_path->empty()) return *explicit_path;
  return std::filesystem::path(output_dir) / (stage + ".ckpt.json");
}

namespace {

// One entry per config key: read from JSON into the struct and write back.
struct Field {
  std::function<void(ExperimentConfig&, const json&)> read;
  std::function<void(const ExperimentConfig&, json&)> write;
};

template <typename T>
Field plain(T ExperimentConfig::*member, const char* key) {
  return {[member](ExperimentConfig& c, const json& v) { c.*member = v.get<T>(); },
          [member, key](const ExperimentConfig& c, json& out) { out[key] = c.*member; }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto add = [&f](const char* key, Field field) { f.emplace(key, std::move(field)); };
    add("version", plain(&ExperimentConfig::version, "version"));
    add("dataset_dir", plain(&ExperimentConfig::dataset_dir, "dataset_dir"));
    add("split", plain(&ExperimentConfig::split, "split"));
    add("image_size", plain(&ExperimentConfig::image_size, "image_size"));
    add("seed", plain(&ExperimentConfig::seed, "seed"));
    add("output_dir", plain(&ExperimentConfig::output_dir, "output_dir"));
    add("bcr", plain(&ExperimentConfig::bcr, "bcr"));
    add("snr_grid", plain(&ExperimentConfig::snr_grid, "snr_grid"));
    add("methods",
        {[](ExperimentConfig& c, const json& v) {
           c.methods.clear();
           for (const auto& m : v) c.methods.push_back(parse_method(m.get<std::string>()));
         },
         [](const ExperimentConfig& c, json& out) {
           json list = json::array();
           for (Method m : c.methods) list.push_back(to_string(m));
           out["methods"] = list;
         }});
    add("operator_scale", plain(&ExperimentConfig::operator_scale, "operator_scale"));
    add("t_effective", plain(&ExperimentConfig::t_effective, "t_effective"));
    add("zeta", {[](ExperimentConfig& c, const json& v) {
                   if (v.is_null()) {
                     c.zeta.reset();
                   } else {
                     c.zeta = v.get<double>();
                   }
                 },
                 [](const ExperimentConfig& c, json& out) {
                   out["zeta"] = c.zeta ? json(*c.zeta) : json(nullptr);
                 }});
    add("guidance",
        {[](ExperimentConfig& c, const json& v) { c.guidance = parse_guidance_mode(v.get<std::string>()); },
         [](const ExperimentConfig& c, json& out) { out["guidance"] = to_string(c.guidance); }});
    add("guidance_scaling",
        {[](ExperimentConfig& c, const json& v) {
           c.guidance_scaling = parse_guidance_scaling(v.get<std::string>());
         },
         [](const ExperimentConfig& c, json& out) {
           out["guidance_scaling"] = to_string(c.guidance_scaling);
         }});
    add("eval_images", plain(&ExperimentConfig::eval_images, "eval_images"));
    add("workers", plain(&ExperimentConfig::workers, "workers"));
    add("perceptual_seed", plain(&ExperimentConfig::perceptual_seed, "perceptual_seed"));
    add("jscc_checkpoint", plain(&ExperimentConfig::jscc_checkpoint, "jscc_checkpoint"));
    add("ddpm_checkpoint", plain(&ExperimentConfig::ddpm_checkpoint, "ddpm_checkpoint"));
    add("inn_checkpoint", plain(&ExperimentConfig::inn_checkpoint, "inn_checkpoint"));
    add("jscc_filters", plain(&ExperimentConfig::jscc_filters, "jscc_filters"));
    add("jscc_stages", plain(&ExperimentConfig::jscc_stages, "jscc_stages"));
    add("jscc_lambda", plain(&ExperimentConfig::jscc_lambda, "jscc_lambda"));
    add("jscc_snr_side_input", plain(&ExperimentConfig::jscc_snr_side_input, "jscc_snr_side_input"));
    add("jscc_steps", plain(&ExperimentConfig::jscc_steps, "jscc_steps"));
    add("jscc_batch", plain(&ExperimentConfig::jscc_batch, "jscc_batch"));
    add("jscc_lr", plain(&ExperimentConfig::jscc_lr, "jscc_lr"));
    add("train_snr_low", plain(&ExperimentConfig::train_snr_low, "train_snr_low"));
    add("train_snr_high", plain(&ExperimentConfig::train_snr_high, "train_snr_high"));
    add("ddpm_width", plain(&ExperimentConfig::ddpm_width, "ddpm_width"));
    add("ddpm_time_dim", plain(&ExperimentConfig::ddpm_time_dim, "ddpm_time_dim"));
    add("diffusion_steps", plain(&ExperimentConfig::diffusion_steps, "diffusion_steps"));
    add("ddpm_steps", plain(&ExperimentConfig::ddpm_steps, "ddpm_steps"));
    add("ddpm_batch", plain(&ExperimentConfig::ddpm_batch, "ddpm_batch"));
    add("ddpm_lr", plain(&ExperimentConfig::ddpm_lr, "ddpm_lr"));
    add("inn_hidden", plain(&ExperimentConfig::inn_hidden, "inn_hidden"));
    add("inn_pairs", plain(&ExperimentConfig::inn_pairs, "inn_pairs"));
    add("inn_blocks", plain(&ExperimentConfig::inn_blocks, "inn_blocks"));
    add("inn_steps", plain(&ExperimentConfig::inn_steps, "inn_steps"));
    add("inn_batch", plain(&ExperimentConfig::inn_batch, "inn_batch"));
    add("inn_lr", plain(&ExperimentConfig::inn_lr, "inn_lr"));
    return f;
  }();
  return table;
}

}  // namespace

json ExperimentConfig::to_json() const {
  json out = json::object();
  for (const auto& [key, field] : fields()) field.write(*this, out);
  return out;
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  if (!doc.contains("version")) throw ConfigError("config is missing the 'version' key");
  ExperimentConfig config;
  std::vector<std::string> unknown;
  std::vector<std::string> invalid;
  for (const auto& [key, value] : doc.items()) {
    const auto it = fields().find(key);
    if (it == fields().end()) {
      unknown.push_back(key);
      continue;
    }
    try {
      it->second.read(config, value);
    } catch (const json::exception& e) {
      invalid.push_back(key + " (" + e.what() + ")");
    } catch (const ConfigError& e) {
      invalid.push_back(key + " (" + e.what() + ")");
    }
  }
  if (!unknown.empty() || !invalid.empty()) {
    std::ostringstream msg;
    msg << "invalid config:";
    if (!unknown.empty()) {
      msg << " unknown key(s):";
      for (const auto& k : unknown) msg << " '" << k << "'";
      msg << ";";
    }
    for (const auto& k : invalid) msg << " bad value for " << k << ";";
    throw ConfigError(msg.str());
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(doc);
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << config.to_json().dump(2) << "\n";
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const json& doc) { return fnv1a_hex(doc.dump()); }

}  // namespace sing::harness
