#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "citypipe/pipeline.hpp"
#include "citypipe/util.hpp"

namespace {

using citypipe::PipelineConfig;
using citypipe::Stage;

constexpr int kExitOk = 0;
constexpr int kExitStageFailure = 1;
constexpr int kExitConfigError = 2;

int run(Stage stage, const PipelineConfig& config, bool print_details) {
  const citypipe::StageReport report = citypipe::run_stage(stage, config);
  if (print_details) {
    std::cout << report.details.dump(2) << "\n";
  }
  return report.ok ? kExitOk : kExitStageFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"citypipe: traffic-scene caption pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "pipeline config JSON");
  bool force = false;
  app.add_flag("--force", force, "rewrite outputs even when up to date");
  int parallelism = 0;
  app.add_option("--parallelism", parallelism, "global cap on in-flight work");

  // Flag overrides, applied after the config document loads.
  std::string annotations, frames, output;
  app.add_option("--annotations", annotations, "annotations file or directory");
  app.add_option("--frames", frames, "frames root directory");
  app.add_option("--out", output, "output directory");

  auto* select = app.add_subcommand("select", "training filter + test best views");
  double thr_p = -1.0, thr_v = -1.0;
  bool invert = false;
  std::string split = "train";
  select->add_option("--thr-p", thr_p, "pedestrian area threshold (px^2)");
  select->add_option("--thr-v", thr_v, "vehicle area threshold (px^2)");
  select->add_flag("--invert", invert, "flip the filter verdict");
  select->add_option("--split", split, "train|test")->check(CLI::IsMember({"train", "test"}));

  auto* render = app.add_subcommand("render", "draw visual prompts and crop joint views");

  auto* build = app.add_subcommand("build-dataset", "assemble instruction records");
  std::string dataset_mode;
  build->add_option("--mode", dataset_mode, "single-round|multi-round");

  auto* infer = app.add_subcommand("infer", "query the endpoint for caption pairs");
  std::string endpoint_url, infer_mode, views;
  infer->add_option("--endpoint", endpoint_url, "chat endpoint base URL");
  infer->add_option("--mode", infer_mode, "independent|pedestrian-vehicle|vehicle-pedestrian");
  infer->add_option("--views", views, "joint|global-only|local-only");

  auto* score = app.add_subcommand("score", "score predictions against ground truth");
  std::string pred_path, gt_path;
  score->add_option("--pred", pred_path, "predictions JSON (defaults to <out>/predictions.json)");
  score->add_option("--gt", gt_path, "ground-truth annotations");

  auto* expand = app.add_subcommand("expand-demo", "block-expansion demonstrator");
  int blocks = 0, added = -1, dim = 0, heads = 0, ffn = 0, vocab = 0;
  expand->add_option("--blocks", blocks, "base depth");
  expand->add_option("--added", added, "blocks to insert");
  expand->add_option("--dim", dim, "model width");
  expand->add_option("--heads", heads, "attention heads");
  expand->add_option("--ffn", ffn, "MLP width");
  expand->add_option("--vocab", vocab, "vocabulary size");

  auto* run_all_cmd = app.add_subcommand("run-all", "select through score in order");

  // let global flags (--config, --out, ...) appear after the subcommand
  for (CLI::App* sub : app.get_subcommands({})) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  PipelineConfig config;
  try {
    if (!config_path.empty()) {
      config = citypipe::load_config(config_path);
    }
    if (!annotations.empty()) config.paths.annotations = annotations;
    if (!frames.empty()) config.paths.frames = frames;
    if (!output.empty()) config.paths.output = output;
    if (parallelism > 0) config.parallelism = parallelism;
    config.force = force;
    if (*select) {
      if (thr_p >= 0) config.selection.thresholds.thr_p = thr_p;
      if (thr_v >= 0) config.selection.thresholds.thr_v = thr_v;
      if (invert) config.selection.invert = true;
    }
    if (*build && !dataset_mode.empty()) {
      config.dataset_mode = citypipe::dataset_mode_from_string(dataset_mode);
    }
    if (*infer) {
      if (!endpoint_url.empty()) config.endpoint.url = endpoint_url;
      if (!infer_mode.empty()) config.infer_mode = citypipe::ordering_mode_from_string(infer_mode);
      if (!views.empty()) config.chat_options.parts = citypipe::view_parts_from_string(views);
    }
    if (*score) {
      if (!gt_path.empty()) config.paths.annotations = gt_path;
    }
    if (*expand) {
      if (blocks > 0) config.expand_demo.spec.n_blocks = blocks;
      if (added >= 0) config.expand_demo.added = added;
      if (dim > 0) config.expand_demo.spec.d_model = dim;
      if (heads > 0) config.expand_demo.spec.n_heads = heads;
      if (ffn > 0) config.expand_demo.spec.d_ffn = ffn;
      if (vocab > 0) config.expand_demo.spec.vocab = vocab;
      if (config.paths.output.empty()) {
        config.paths.output = std::filesystem::temp_directory_path() / "citypipe-expand-demo";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    if (*select) {
      const citypipe::StageReport report = citypipe::run_stage(Stage::select, config);
      const auto out = config.paths.output;
      const std::string file = split == "train" ? "selection_report.json" : "test_views.json";
      std::cout << citypipe::read_file(out / file);
      return report.ok ? kExitOk : kExitStageFailure;
    }
    if (*render) return run(Stage::render, config, true);
    if (*build) return run(Stage::build_dataset, config, true);
    if (*infer) return run(Stage::infer, config, true);
    if (*score) {
      if (config.paths.output.empty()) {
        throw citypipe::config_error("paths.output is required (pass --out)");
      }
      if (!pred_path.empty()) {
        // Scoring an explicit predictions file copies it into the run layout.
        const std::string bytes = citypipe::read_file(pred_path);
        citypipe::write_file(config.paths.output / "predictions.json", bytes);
      }
      const citypipe::StageReport report = citypipe::run_stage(Stage::score, config);
      std::cout << citypipe::read_file(config.paths.output / "scorecard.json");
      return report.ok ? kExitOk : kExitStageFailure;
    }
    if (*expand) {
      const citypipe::StageReport report = citypipe::run_stage(Stage::expand_demo, config);
      const auto& d = report.details;
      std::cout << "plan: depth " << d["base_depth"] << " -> " << d["expanded_depth"]
                << ", one copy after every " << d["group_size"] << " blocks\n"
                << "insertion indices: " << d["insertion_indices"].dump() << "\n"
                << "params: " << d["base_params"] << " -> " << d["expanded_params"] << " (+"
                << d["added_params"] << ", " << d["per_block_params"] << " per block)\n"
                << "identity residual: " << d["identity_residual"] << "\n";
      return report.ok ? kExitOk : kExitStageFailure;
    }
    if (*run_all_cmd) {
      for (Stage stage : {Stage::select, Stage::render, Stage::build_dataset, Stage::infer,
                          Stage::score}) {
        const citypipe::StageReport report = citypipe::run_stage(stage, config);
        std::cout << report.stage << ": " << (report.ok ? "ok" : "failed")
                  << (report.skipped ? " (up to date)" : "") << "\n";
        if (!report.ok) {
          return kExitStageFailure;
        }
      }
      return kExitOk;
    }
  } catch (const citypipe::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStageFailure;
  }
  return kExitOk;
}
