#include "sing/harness/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace sing::harness;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("-c,--config", c.config_path, "experiment config (JSON)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("-o,--out", c.out, "override the output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig config = load_config(c.config_path);
  if (c.seed) config.seed = *c.seed;
  if (!c.out.empty()) config.output_dir = c.out;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeepJSCC transmission with diffusion-based receivers"};
  app.require_subcommand(1);

  Common ingest_opts;
  auto* ingest_cmd = app.add_subcommand("ingest", "split a dataset folder and write the split lists");
  add_common(ingest_cmd, ingest_opts);

  std::string synth_dir;
  int synth_count = 1000;
  int synth_size = 64;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "draw a synthetic face-like image folder");
  synth_cmd->add_option("dir", synth_dir, "output folder")->required();
  synth_cmd->add_option("-n,--count", synth_count, "number of images")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth_size, "image side in pixels")->check(CLI::Range(8, 4096));
  synth_cmd->add_option("--seed", synth_seed, "generator seed");

  Common init_opts;
  std::string init_path;
  auto* init_cmd = app.add_subcommand("init-config", "write a config with every default filled in");
  init_cmd->add_option("path", init_path, "where to write the config")->required();
  init_cmd->add_option("--dataset", init_opts.config_path, "dataset folder to reference");
  init_cmd->add_option("-o,--out", init_opts.out, "output directory to reference");

  Common train_opts;
  std::string stage;
  int report_every = 50;
  auto* train_cmd = app.add_subcommand("train", "train one stage: jscc, ddpm or inn");
  train_cmd->add_option("stage", stage, "stage to train")
      ->required()
      ->check(CLI::IsMember({"jscc", "ddpm", "inn"}));
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--report-every", report_every, "progress interval in steps (0 = silent)");

  Common eval_opts;
  auto* eval_cmd = app.add_subcommand("evaluate", "score every method over the SNR grid");
  add_common(eval_cmd, eval_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest_cmd) {
      const auto config = resolve(ingest_opts);
      const auto data = load_dataset(config);
      write_split_files(data, config.output_dir);
      std::cout << "ingested " << data.names.size() << " images: " << data.train.size() << " train, "
                << data.val.size() << " val, " << data.test.size() << " test -> "
                << config.output_dir << "\n";
    } else if (*synth_cmd) {
      synthesize_faces(synth_dir, synth_count, synth_size, synth_seed);
      std::cout << "wrote " << synth_count << " images to " << synth_dir << "\n";
    } else if (*init_cmd) {
      ExperimentConfig config;
      config.dataset_dir = init_opts.config_path;
      if (!init_opts.out.empty()) config.output_dir = init_opts.out;
      save_config(config, init_path);
      std::cout << "wrote " << init_path << "\n";
    } else if (*train_cmd) {
      const auto config = resolve(train_opts);
      const auto data = load_dataset(config);
      std::cout << "training " << stage << " on " << data.train.size() << " images\n";
      const auto result = train_stage(stage, config, data, &std::cout, report_every);
      std::cout << "checkpoint: " << result.checkpoint.string() << "\nloss log: "
                << result.loss_log.string() << "\n";
    } else if (*eval_cmd) {
      const auto config = resolve(eval_opts);
      const auto data = load_dataset(config);
      const auto result = evaluate(config, data, &std::cout);
      std::cout << "method,snr_db,psnr_db,perceptual\n";
      for (const auto& a : result.aggregates) {
        std::cout << a.method << "," << a.snr_db << "," << a.psnr_db << "," << a.perceptual << "\n";
      }
      std::cout << "mean-image baseline: " << result.baseline_psnr_db << " dB\nresults in "
                << result.out_dir.string() << " (" << result.wall_seconds << " s)\n";
    }
  } catch (const DependencyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& f : e.files()) std::cerr << "  " << f << "\n";
    return 2;
  } catch (const sing::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
