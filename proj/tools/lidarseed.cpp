// lidarseed command-line driver: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "lidarseed/stages.hpp"

namespace {

using lidarseed::PipelineConfig;

int run_stage(const std::string& name, const std::string& config_path,
              std::optional<std::uint64_t> seed_override, std::optional<int> workers_override,
              std::optional<std::string> out_override) {
  static const std::map<std::string, std::function<void(const PipelineConfig&)>> stages{
      {"synth-gen", lidarseed::stage_synth_gen}, {"segment", lidarseed::stage_segment},
      {"pretrain", lidarseed::stage_pretrain},   {"init", lidarseed::stage_init},
      {"iterate", lidarseed::stage_iterate},     {"export", lidarseed::stage_export},
      {"eval", lidarseed::stage_eval},           {"sweep-eta", lidarseed::stage_sweep_eta},
      {"stats", lidarseed::stage_stats},         {"overlay", lidarseed::stage_overlay}};

  PipelineConfig cfg = lidarseed::load_pipeline_config(config_path, name != "synth-gen");
  if (seed_override) cfg.seed = *seed_override;
  if (workers_override) cfg.workers = *workers_override;
  if (out_override) cfg.out_dir = *out_override;
  stages.at(name)(cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unsupervised lidar segment labeling pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out_dir;

  const std::vector<std::string> names{"synth-gen", "segment", "pretrain", "init",
                                       "iterate",   "export",  "eval",     "sweep-eta",
                                       "stats",     "overlay"};
  const std::map<std::string, std::string> help{
      {"synth-gen", "generate the synthetic dataset into dataset_dir"},
      {"segment", "extract segment proposals for every frame"},
      {"pretrain", "train the optional contrastive feature encoder"},
      {"init", "k-means initial cluster labels"},
      {"iterate", "iterative self-labeling rounds"},
      {"export", "export pseudo-annotations from the final labels"},
      {"eval", "cluster-to-category mapping and AP report"},
      {"sweep-eta", "re-label and evaluate across the eta sweep"},
      {"stats", "per-round cluster statistics as CSV and plots"},
      {"overlay", "draw exported annotations onto the camera images"}};

  for (const auto& name : names) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "path to the JSON pipeline config")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--workers", workers, "override the config worker count");
    sub->add_option("--out", out_dir, "override the config output directory");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    return run_stage(name, config_path, seed, workers, out_dir);
  } catch (const lidarseed::ConfigError& e) {
    std::cerr << "error: config-error: " << e.what() << '\n';
  } catch (const lidarseed::EmptyFrameError& e) {
    std::cerr << "error: empty-frame: " << e.what() << '\n';
  } catch (const lidarseed::NoForegroundLabelsError& e) {
    std::cerr << "error: no-foreground-labels: " << e.what() << '\n';
  } catch (const lidarseed::DanglingLabelError& e) {
    std::cerr << "error: dangling-label: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: runtime-error: " << e.what() << '\n';
  }
  return 1;
}
