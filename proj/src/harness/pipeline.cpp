#include "sing/harness/pipeline.hpp"

#include "sing/harness/plot.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

namespace fs = std::filesystem;

namespace sing::harness {

std::uint64_t cell_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

Dataset load_dataset(const ExperimentConfig& config) {
  if (config.dataset_dir.empty()) {
    throw ConfigError("dataset_dir is not set (generate a folder with `synth` or point it at images)");
  }
  return ingest(config.dataset_dir, config.image_size, config.split, config.seed);
}

namespace {

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string num(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void report(std::ostream* progress, int step, int total, int every, double loss) {
  if (progress == nullptr || every <= 0) return;
  if (step % every == 0 || step == total) {
    *progress << "  step " << step << "/" << total << "  loss " << loss << "\n" << std::flush;
  }
}

json train_metadata(const ExperimentConfig& config, const Dataset& data, const std::vector<double>& losses,
                    int steps, int batch, double lr) {
  return {{"steps", steps},
          {"batch_size", batch},
          {"learning_rate", lr},
          {"seed", config.seed},
          {"train_images", data.train.size()},
          {"final_loss", losses.empty() ? json(nullptr) : json(losses.back())},
          {"experiment_hash", config_hash(config.to_json())}};
}

TrainResult train_jscc_stage(const ExperimentConfig& config, const Dataset& data,
                             std::ostream* progress, int every) {
  const FeatureDistance<float> perceptual(config.perceptual_seed);
  JsccTrainOptions options;
  options.snr_low_db = config.train_snr_low;
  options.snr_high_db = config.train_snr_high;
  options.steps = config.jscc_steps;
  options.batch_size = config.jscc_batch;
  options.learning_rate = config.jscc_lr;
  options.seed = cell_seed(config.seed, 1, 0);
  const auto model =
      train(config.jscc_config(), data.gather(data.train), options, perceptual,
            [&](int step, double loss, double) { report(progress, step + 1, options.steps, every, loss); });

  TrainResult result;
  result.losses = model.log.loss;
  result.checkpoint = config.checkpoint_path("jscc");
  result.loss_log = fs::path(config.output_dir) / "jscc_loss.csv";
  auto log = open_out(result.loss_log);
  log << "step,loss,snr_db,sigma_sq\n";
  for (std::size_t i = 0; i < model.log.loss.size(); ++i) {
    log << i + 1 << "," << num(model.log.loss[i]) << "," << num(model.log.snr_db[i]) << ","
        << num(model.log.sigma_sq[i]) << "\n";
  }
  auto meta = train_metadata(config, data, result.losses, options.steps, options.batch_size,
                             options.learning_rate);
  meta["perceptual"] = perceptual.id();
  make_checkpoint(model, meta).save(result.checkpoint);
  return result;
}

TrainResult train_ddpm_stage(const ExperimentConfig& config, const Dataset& data,
                             std::ostream* progress, int every) {
  Denoiser<float> model(config.denoiser_config(), cell_seed(config.seed, 2, 0));
  DiffusionTrainer<float> trainer(model, config.schedule(), config.ddpm_lr,
                                  cell_seed(config.seed, 2, 1));
  Rng pick(cell_seed(config.seed, 2, 2));
  const auto images = data.gather(data.train);

  TrainResult result;
  for (int step = 0; step < config.ddpm_steps; ++step) {
    std::vector<Tensor<float>> batch;
    for (int b = 0; b < config.ddpm_batch; ++b) batch.push_back(images[pick() % images.size()]);
    result.losses.push_back(trainer.train_step(stack(batch)));
    report(progress, step + 1, config.ddpm_steps, every, result.losses.back());
  }
  result.checkpoint = config.checkpoint_path("ddpm");
  result.loss_log = fs::path(config.output_dir) / "ddpm_loss.csv";
  auto log = open_out(result.loss_log);
  log << "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) log << i + 1 << "," << num(result.losses[i]) << "\n";
  make_checkpoint(model, config.diffusion_steps,
                  train_metadata(config, data, result.losses, config.ddpm_steps, config.ddpm_batch,
                                 config.ddpm_lr))
      .save(result.checkpoint);
  return result;
}

JsccModel<float> load_matching_jscc(const ExperimentConfig& config) {
  auto model = load_jscc(Checkpoint::load(config.checkpoint_path("jscc"), "jscc"));
  const auto& c = model.config();
  if (c.height != config.image_size || c.width != config.image_size) {
    throw ConfigError("jscc checkpoint was trained at " + std::to_string(c.height) + "x" +
                      std::to_string(c.width) + ", config asks for " +
                      std::to_string(config.image_size));
  }
  if (c.bcr != config.bcr) {
    throw ConfigError("jscc checkpoint bcr " + num(c.bcr) + " differs from config bcr " +
                      num(config.bcr));
  }
  return model;
}

TrainResult train_inn_stage(const ExperimentConfig& config, const Dataset& data,
                            std::ostream* progress, int every) {
  const fs::path jscc_path = config.checkpoint_path("jscc");
  if (!fs::exists(jscc_path)) {
    throw DependencyError("jscc", "inn training needs the jscc checkpoint " + jscc_path.string() +
                                      " (run `train jscc` first)");
  }
  const auto jscc = load_matching_jscc(config);
  const auto op = config.degradation();
  const auto images = data.gather(data.train);
  const double lo = config.train_snr_low;
  const double hi = config.train_snr_high;
  const std::uint64_t base = cell_seed(config.seed, 3, 0);

  // Fresh SNR and channel noise for every (epoch, image).
  const InnSampleSource<float> source = [&](std::size_t i, int epoch) {
    const std::uint64_t s = cell_seed(base, static_cast<std::uint64_t>(epoch), i);
    Rng rng(s);
    const double snr = lo + (hi - lo) * unit_uniform(rng);
    const auto x_dec = transmit(jscc, images[i], snr, s);
    return InnSample<float>{images[i], measurement_from_decoder(x_dec, op), snr};
  };

  CondInn<float> inn(config.inn_config(), cell_seed(config.seed, 3, 1));
  InnTrainOptions options;
  options.steps = config.inn_steps;
  options.batch_size = config.inn_batch;
  options.learning_rate = config.inn_lr;
  options.seed = cell_seed(config.seed, 3, 2);

  TrainResult result;
  result.losses = train_inn<float>(inn, images.size(), source, options, [&](int step, double loss) {
    report(progress, step + 1, options.steps, every, loss);
  });
  result.checkpoint = config.checkpoint_path("inn");
  result.loss_log = fs::path(config.output_dir) / "inn_loss.csv";
  auto log = open_out(result.loss_log);
  log << "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) log << i + 1 << "," << num(result.losses[i]) << "\n";
  auto meta = train_metadata(config, data, result.losses, options.steps, options.batch_size,
                             options.learning_rate);
  meta["jscc_checkpoint"] = jscc_path.string();
  make_checkpoint(inn, meta).save(result.checkpoint);
  return result;
}

}  // namespace

TrainResult train_stage(const std::string& stage, const ExperimentConfig& config,
                        const Dataset& data, std::ostream* progress, int report_every) {
  config.validate();
  if (data.train.empty()) throw ConfigError("the training split is empty");
  fs::create_directories(config.output_dir);
  if (stage == "jscc") return train_jscc_stage(config, data, progress, report_every);
  if (stage == "ddpm") return train_ddpm_stage(config, data, progress, report_every);
  if (stage == "inn") return train_inn_stage(config, data, progress, report_every);
  throw ConfigError("unknown training stage '" + stage + "' (expected jscc, ddpm or inn)");
}

namespace {

struct Models {
  std::optional<JsccModel<float>> jscc;
  std::optional<Denoiser<float>> denoiser;
  std::optional<CondInn<float>> inn;
  json checkpoints = json::object();
};

bool uses(const ExperimentConfig& config, Method m) {
  return std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end();
}

Models load_models(const ExperimentConfig& config) {
  std::vector<std::string> needed{"jscc"};
  if (uses(config, Method::sing_zero) || uses(config, Method::sing_inn)) needed.push_back("ddpm");
  if (uses(config, Method::sing_inn)) needed.push_back("inn");
  std::vector<std::string> missing;
  for (const auto& stage : needed) {
    if (!fs::exists(config.checkpoint_path(stage))) missing.push_back(stage);
  }
  if (!missing.empty()) {
    std::string msg = "evaluation needs checkpoint(s) that do not exist:";
    for (const auto& m : missing) msg += " " + m + " (" + config.checkpoint_path(m).string() + ")";
    throw DependencyError(missing.front(), msg);
  }

  Models models;
  for (const auto& stage : needed) {
    const auto path = config.checkpoint_path(stage);
    const auto ckpt = Checkpoint::load(path, stage);
    models.checkpoints[stage] = {{"path", path.string()}, {"config_hash", config_hash(ckpt.config)}};
    if (stage == "jscc") models.jscc.emplace(load_matching_jscc(config));
    if (stage == "ddpm") {
      int steps = 0;
      models.denoiser.emplace(load_denoiser(ckpt, &steps));
      if (steps != config.diffusion_steps) {
        throw ConfigError("ddpm checkpoint uses " + std::to_string(steps) +
                          " diffusion steps, config has " + std::to_string(config.diffusion_steps));
      }
    }
    if (stage == "inn") {
      models.inn.emplace(load_inn(ckpt));
      if (models.inn->config().scale != config.operator_scale) {
        throw ConfigError("inn checkpoint scale " + std::to_string(models.inn->config().scale) +
                          " differs from operator_scale " + std::to_string(config.operator_scale));
      }
    }
  }
  return models;
}

double consistency(const LinearDegradation& op, const Tensor<float>& x, const Tensor<float>& y) {
  return static_cast<double>((op.apply(x).array() - y.array()).abs().maxCoeff());
}

void write_csv(const EvaluationResult& result, const fs::path& dir) {
  auto metrics = open_out(dir / "metrics.csv");
  metrics << "method,bcr,snr_db,sigma_sq,image,image_name,seed,psnr_db,perceptual,consistency,zeta,"
             "warnings\n";
  for (const auto& r : result.records) {
    std::string warn;
    for (const auto& w : r.warnings) warn += (warn.empty() ? "" : " | ") + w;
    std::replace(warn.begin(), warn.end(), ',', ';');
    metrics << r.method << "," << num(r.bcr) << "," << num(r.snr_db) << "," << num(r.sigma_sq) << ","
            << r.image << "," << r.image_name << "," << r.seed << "," << num(r.psnr_db) << ","
            << num(r.perceptual) << "," << num(r.consistency) << "," << num(r.zeta) << "," << warn
            << "\n";
  }
  auto summary = open_out(dir / "summary.csv");
  summary << "method,bcr,snr_db,count,psnr_db_mean,perceptual_mean\n";
  const double bcr = result.records.empty() ? 0.0 : result.records.front().bcr;
  for (const auto& a : result.aggregates) {
    summary << a.method << "," << num(bcr) << "," << num(a.snr_db) << "," << a.count << ","
            << num(a.psnr_db) << "," << num(a.perceptual) << "\n";
  }
}

json record_json(const CellRecord& r) {
  return {{"method", r.method},       {"bcr", r.bcr},
          {"snr_db", r.snr_db},       {"sigma_sq", r.sigma_sq},
          {"image", r.image},         {"image_name", r.image_name},
          {"seed", r.seed},           {"psnr_db", std::isfinite(r.psnr_db) ? json(r.psnr_db) : json("inf")},
          {"perceptual", r.perceptual},
          {"consistency", std::isnan(r.consistency) ? json(nullptr) : json(r.consistency)},
          {"zeta", r.zeta},           {"warnings", r.warnings}};
}

}  // namespace

EvaluationResult evaluate(const ExperimentConfig& config, const Dataset& data,
                          std::ostream* progress) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Models models = load_models(config);
  const auto& jscc = *models.jscc;
  const auto op = config.degradation();
  const auto schedule = config.schedule();
  const FeatureDistance<float> perceptual(config.perceptual_seed);

  std::vector<std::size_t> test = data.test;
  if (config.eval_images > 0 && test.size() > static_cast<std::size_t>(config.eval_images)) {
    test.resize(static_cast<std::size_t>(config.eval_images));
  }
  if (test.empty()) throw ConfigError("the test split is empty");

  EvaluationResult result;
  result.out_dir = fs::path(config.output_dir) / "eval";

  // dataset-mean image as a reference point for the PSNR values
  {
    const auto& ref_idx = data.train.empty() ? test : data.train;
    Tensor<float> mean_image(data.images.at(ref_idx.front()).shape());
    for (std::size_t i : ref_idx) mean_image.array() += data.images[i].array();
    mean_image.array() /= static_cast<float>(ref_idx.size());
    double total = 0.0;
    for (std::size_t i : test) total += psnr(mean_image, data.images[i]);
    result.baseline_psnr_db = total / static_cast<double>(test.size());
  }

  const std::size_t n_snr = config.snr_grid.size();
  const std::size_t n_cells = n_snr * test.size();
  std::vector<std::vector<CellRecord>> cells(n_cells);
  std::vector<std::vector<std::pair<std::string, Tensor<float>>>> previews(n_snr);

  auto run_cell = [&](std::size_t cell) {
    const std::size_t si = cell / test.size();
    const std::size_t ii = cell % test.size();
    const double snr = config.snr_grid[si];
    const std::uint64_t seed = cell_seed(config.seed, si, ii);
    const auto& x = data.images[test[ii]];
    const auto x_dec = transmit(jscc, x, snr, seed);
    const auto y = measurement_from_decoder(x_dec, op);
    const std::uint64_t sampler_seed = cell_seed(seed, 0xd1ff, 0);

    std::vector<CellRecord> out;
    std::vector<std::pair<std::string, Tensor<float>>> shown;
    for (Method m : config.methods) {
      CellRecord r;
      r.method = to_string(m);
      r.bcr = config.bcr;
      r.snr_db = snr;
      r.sigma_sq = channel::snr_to_sigma_sq(snr, jscc.config().avg_power);
      r.image = ii;
      r.image_name = data.names[test[ii]];
      r.seed = seed;
      r.consistency = std::numeric_limits<double>::quiet_NaN();
      Tensor<float> x_hat;
      if (m == Method::deepjscc) {
        x_hat = x_dec;
      } else {
        Restoration<float> restored;
        if (m == Method::sing_zero) {
          restored = restore(y, *models.denoiser, op, schedule, {sampler_seed, config.t_effective});
        } else {
          SingInnConfig c;
          c.seed = sampler_seed;
          c.t_effective = config.t_effective;
          c.snr_db = snr;
          c.zeta = config.zeta ? *config.zeta : zeta_schedule(snr);
          c.mode = config.guidance;
          c.scaling = config.guidance_scaling;
          r.zeta = c.zeta;
          restored = restore_inn(y, *models.denoiser, *models.inn, op, schedule, c);
        }
        r.warnings = restored.stats.warnings;
        if (!restored.image.array().allFinite()) {
          throw std::runtime_error(r.method + " diverged at snr " + num(snr) + " dB, image " +
                                   r.image_name + " (non-finite output)");
        }
        // clamp to the valid range while keeping A x = y
        x_hat = op.project_box(restored.image, y);
        r.consistency = consistency(op, x_hat, y);
        if (!(r.consistency <= kConsistencyTolerance)) {
          throw std::runtime_error("consistency check failed for " + r.method + " at snr " +
                                   num(snr) + " dB, image " + r.image_name + ": ||A x - y||_inf = " +
                                   num(r.consistency) +
                                   (m == Method::sing_inn &&
                                            config.guidance_scaling == GuidanceScaling::raw
                                        ? " (raw guidance likely diverged; try guidance_scaling "
                                          "\"normalized\")"
                                        : ""));
        }
      }
      r.psnr_db = psnr(x_hat, x);
      r.perceptual = perceptual_distance(perceptual, x_hat, x);
      if (ii == 0) shown.emplace_back(r.method, x_hat);
      out.push_back(std::move(r));
    }
    cells[cell] = std::move(out);
    if (ii == 0) previews[si] = std::move(shown);
  };

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t cell; (cell = next++) < n_cells;) {
      try {
        run_cell(cell);
      } catch (...) {
        const std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = n_cells;
        return;
      }
      const std::size_t finished = ++done;
      if (progress != nullptr) {
        const std::lock_guard lock(log_mutex);
        *progress << "  cell " << finished << "/" << n_cells << "\n" << std::flush;
      }
    }
  };
  const int threads = std::min<int>(config.workers, static_cast<int>(n_cells));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (auto& c : cells) {
    for (auto& r : c) result.records.push_back(std::move(r));
  }
  for (Method m : config.methods) {
    for (double snr : config.snr_grid) {
      Aggregate a{to_string(m), snr, 0, 0.0, 0.0};
      for (const auto& r : result.records) {
        if (r.method != a.method || r.snr_db != snr) continue;
        ++a.count;
        a.psnr_db += r.psnr_db;
        a.perceptual += r.perceptual;
      }
      a.psnr_db /= static_cast<double>(a.count);
      a.perceptual /= static_cast<double>(a.count);
      result.aggregates.push_back(a);
    }
  }

  write_csv(result, result.out_dir);

  std::vector<Series> psnr_series, perceptual_series;
  for (Method m : config.methods) {
    Series p{to_string(m), {}, {}}, q{to_string(m), {}, {}};
    for (const auto& a : result.aggregates) {
      if (a.method != p.label) continue;
      p.x.push_back(a.snr_db);
      p.y.push_back(a.psnr_db);
      q.x.push_back(a.snr_db);
      q.y.push_back(a.perceptual);
    }
    psnr_series.push_back(std::move(p));
    perceptual_series.push_back(std::move(q));
  }
  line_plot(psnr_series, "PSNR vs SNR (bcr " + short_num(config.bcr) + ")", "SNR [dB]", "PSNR [dB]",
            result.out_dir / "psnr_vs_snr.png");
  line_plot(perceptual_series, "Perceptual distance vs SNR (bcr " + short_num(config.bcr) + ")",
            "SNR [dB]", "distance", result.out_dir / "perceptual_vs_snr.png");

  save_png(data.images[test[0]], result.out_dir / "samples" / "reference.png");
  for (std::size_t si = 0; si < n_snr; ++si) {
    for (const auto& [method, img] : previews[si]) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_snr%+g.png", method.c_str(), config.snr_grid[si]);
      save_png(img, result.out_dir / "samples" / name);
    }
  }

  std::set<std::string> warnings;
  json records = json::array();
  for (const auto& r : result.records) {
    records.push_back(record_json(r));
    warnings.insert(r.warnings.begin(), r.warnings.end());
  }
  json aggregates = json::array();
  for (const auto& a : result.aggregates) {
    aggregates.push_back({{"method", a.method},
                          {"snr_db", a.snr_db},
                          {"count", a.count},
                          {"psnr_db", std::isfinite(a.psnr_db) ? json(a.psnr_db) : json("inf")},
                          {"perceptual", a.perceptual}});
  }
  const json config_doc = config.to_json();
  const json manifest = {
      {"software", {{"name", kSoftwareName}, {"version", kSoftwareVersion}}},
      {"config", config_doc},
      {"config_hash", config_hash(config_doc)},
      {"checkpoints", models.checkpoints},
      {"perceptual_backend", perceptual.id()},
      {"dataset",
       {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()},
        {"evaluated", test.size()}}},
      {"baseline", {{"mean_image_psnr_db", result.baseline_psnr_db}}},
      {"consistency_tolerance", kConsistencyTolerance},
      {"aggregates", aggregates},
      {"records", records},
      {"warnings", std::vector<std::string>(warnings.begin(), warnings.end())}};
  open_out(result.out_dir / "manifest.json") << manifest.dump(2) << "\n";

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  // wall-clock lives apart from the manifest so that the manifest stays reproducible
  open_out(result.out_dir / "timing.json")
      << json{{"wall_seconds", result.wall_seconds}, {"cells", n_cells}, {"workers", threads}}.dump(2)
      << "\n";
  return result;
}

}  // namespace sing::harness
