#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "citypipe/block_expansion.hpp"
#include "citypipe/metrics.hpp"
#include "citypipe/orchestrator.hpp"
#include "citypipe/qa.hpp"
#include "citypipe/view_selection.hpp"
#include "citypipe/visual_prompt.hpp"

namespace citypipe {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  struct Paths {
    std::filesystem::path annotations;
    std::filesystem::path frames;
    std::filesystem::path output;
  } paths;

  SelectionOptions selection;
  RenderConfig render;
  DatasetMode dataset_mode = DatasetMode::single_round;
  // "rules" (default) or "remote": label sentences through the chat
  // endpoint, falling back to the rule table when unreachable.
  std::string dataset_classifier = "rules";

  EndpointConfig endpoint;
  OrderingMode infer_mode = OrderingMode::vehicle_pedestrian;
  ChatOptions chat_options;
  int parallelism = 4;

  EvalOptions metrics;

  struct ExpandDemo {
    TransformerSpec spec{8, 32, 4, 64, 97, 32};
    int added = 2;
    std::uint64_t seed = 7;
  } expand_demo;

  int log_verbosity = 2;  // info
  bool force = false;
};

// Defaults overlaid with the document's sections; unknown keys are
// reported, invalid values throw config_error.
PipelineConfig config_from_json(const nlohmann::json& doc);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const PipelineConfig& config);

enum class Stage { select, render, build_dataset, infer, score, expand_demo };

const char* to_string(Stage s);

struct StageReport {
  std::string stage;
  bool ok = false;
  bool skipped = false;       // outputs were already up to date
  nlohmann::json details;     // stage-specific counters and messages
};

// Runs one stage against the configured paths; reports are also written to
// <output>/reports/<stage>.json. Missing prerequisites throw config_error
// (bad paths) or std::runtime_error naming the stage to run first.
StageReport run_stage(Stage stage, const PipelineConfig& config);

// select -> render -> build-dataset -> infer -> score; stops at the first
// failing stage.
std::vector<StageReport> run_all(const PipelineConfig& config);

// Render-manifest access shared by stages and tests.
struct ManifestEntry {
  std::string id;
  std::string scenario_id;
  std::string view_id;
  int phase_index = 0;
  std::string global;               // path relative to output root
  std::optional<std::string> local;
  bool global_only = false;
  bool frame_fallback = false;
};

struct RenderManifest {
  std::string fingerprint;
  std::vector<ManifestEntry> entries;

  std::map<std::string, RenderedViews> as_view_map() const;
};

RenderManifest load_manifest(const std::filesystem::path& path);
nlohmann::json manifest_to_json(const RenderManifest& manifest);

}  // namespace citypipe
