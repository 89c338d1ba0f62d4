#include "citypipe/pipeline.hpp"

#include <algorithm>
#include <memory>
#include <random>
#include <set>

#include "citypipe/log.hpp"
#include "citypipe/util.hpp"

namespace citypipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_keys(const json& node, const std::set<std::string>& known, const std::string& where) {
  if (!node.is_object()) {
    throw config_error(where + " must be a JSON object");
  }
  for (const auto& [key, value] : node.items()) {
    if (known.find(key) == known.end()) {
      throw config_error("unknown config key '" + where + "." + key + "'");
    }
  }
}

Rgb rgb_from_json(const json& node, const std::string& where) {
  if (!node.is_array() || node.size() != 3) {
    throw config_error(where + " must be [r,g,b]");
  }
  return Rgb{node[0].get<int>(), node[1].get<int>(), node[2].get<int>()};
}

template <typename T>
T get_or(const json& node, const char* key, T fallback) {
  if (!node.contains(key)) {
    return fallback;
  }
  try {
    return node[key].get<T>();
  } catch (const json::exception& e) {
    throw config_error("bad value for '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace

PipelineConfig config_from_json(const json& doc) {
  require_keys(doc, {"paths", "selection", "render", "dataset", "endpoint", "infer", "metrics",
                     "expand_demo", "logging"},
               "config");
  PipelineConfig cfg;
  if (doc.contains("paths")) {
    const json& node = doc["paths"];
    require_keys(node, {"annotations", "frames", "output"}, "paths");
    cfg.paths.annotations = get_or<std::string>(node, "annotations", "");
    cfg.paths.frames = get_or<std::string>(node, "frames", "");
    cfg.paths.output = get_or<std::string>(node, "output", "");
  }
  if (doc.contains("selection")) {
    const json& node = doc["selection"];
    require_keys(node, {"thr_p", "thr_v", "invert", "excluded_views"}, "selection");
    cfg.selection.thresholds.thr_p = get_or<double>(node, "thr_p", 0.0);
    cfg.selection.thresholds.thr_v = get_or<double>(node, "thr_v", 0.0);
    cfg.selection.invert = get_or<bool>(node, "invert", false);
    cfg.selection.excluded_views =
        get_or<std::vector<std::string>>(node, "excluded_views", {});
    if (cfg.selection.thresholds.thr_p < 0 || cfg.selection.thresholds.thr_v < 0) {
      throw config_error("selection thresholds must be >= 0");
    }
  }
  if (doc.contains("render")) {
    const json& node = doc["render"];
    require_keys(node, {"box_scale", "crop_scale", "crop_from_augmented", "style"}, "render");
    cfg.render.box_scale = get_or<double>(node, "box_scale", 1.2);
    cfg.render.crop_scale = get_or<double>(node, "crop_scale", 1.5);
    cfg.render.crop_from_augmented = get_or<bool>(node, "crop_from_augmented", true);
    if (cfg.render.box_scale <= 0 || cfg.render.crop_scale <= 0) {
      throw config_error("render scales must be > 0");
    }
    if (node.contains("style")) {
      const json& style = node["style"];
      require_keys(style, {"pedestrian_color", "vehicle_color", "line_thickness"}, "render.style");
      if (style.contains("pedestrian_color")) {
        cfg.render.style.pedestrian_color =
            rgb_from_json(style["pedestrian_color"], "render.style.pedestrian_color");
      }
      if (style.contains("vehicle_color")) {
        cfg.render.style.vehicle_color =
            rgb_from_json(style["vehicle_color"], "render.style.vehicle_color");
      }
      cfg.render.style.line_thickness = get_or<int>(style, "line_thickness", 0);
      if (cfg.render.style.pedestrian_color == cfg.render.style.vehicle_color) {
        throw config_error("pedestrian and vehicle colors must differ");
      }
    }
  }
  if (doc.contains("dataset")) {
    const json& node = doc["dataset"];
    require_keys(node, {"mode", "classifier"}, "dataset");
    try {
      cfg.dataset_mode = dataset_mode_from_string(get_or<std::string>(node, "mode", "single_round"));
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
    cfg.dataset_classifier = get_or<std::string>(node, "classifier", "rules");
    if (cfg.dataset_classifier != "rules" && cfg.dataset_classifier != "remote") {
      throw config_error("dataset.classifier must be rules|remote");
    }
  }
  if (doc.contains("endpoint")) {
    const json& node = doc["endpoint"];
    require_keys(node,
                 {"url", "path", "model", "temperature", "max_tokens", "max_attempts",
                  "retry_base_ms", "timeout_sec", "payload_limit_bytes", "token_env"},
                 "endpoint");
    cfg.endpoint.url = get_or<std::string>(node, "url", "");
    cfg.endpoint.path = get_or<std::string>(node, "path", cfg.endpoint.path);
    cfg.endpoint.model = get_or<std::string>(node, "model", cfg.endpoint.model);
    cfg.endpoint.temperature = get_or<double>(node, "temperature", 0.0);
    cfg.endpoint.max_tokens = get_or<int>(node, "max_tokens", 1024);
    cfg.endpoint.max_attempts = get_or<int>(node, "max_attempts", 3);
    cfg.endpoint.retry_base_ms = get_or<int>(node, "retry_base_ms", 200);
    cfg.endpoint.timeout_sec = get_or<int>(node, "timeout_sec", 120);
    cfg.endpoint.payload_limit_bytes =
        get_or<std::size_t>(node, "payload_limit_bytes", cfg.endpoint.payload_limit_bytes);
    cfg.endpoint.token_env = get_or<std::string>(node, "token_env", cfg.endpoint.token_env);
    if (cfg.endpoint.max_attempts < 1) {
      throw config_error("endpoint.max_attempts must be >= 1");
    }
  }
  if (doc.contains("infer")) {
    const json& node = doc["infer"];
    require_keys(node, {"mode", "parallelism", "views", "resend_images"}, "infer");
    try {
      cfg.infer_mode =
          ordering_mode_from_string(get_or<std::string>(node, "mode", "vehicle-pedestrian"));
      cfg.chat_options.parts = view_parts_from_string(get_or<std::string>(node, "views", "joint"));
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
    cfg.chat_options.resend_images = get_or<bool>(node, "resend_images", false);
    cfg.parallelism = get_or<int>(node, "parallelism", 4);
    if (cfg.parallelism < 1) {
      throw config_error("infer.parallelism must be >= 1");
    }
  }
  if (doc.contains("metrics")) {
    const json& node = doc["metrics"];
    require_keys(node, {"cider_variant", "bleu_smoothing"}, "metrics");
    const std::string variant = get_or<std::string>(node, "cider_variant", "cider-d");
    if (variant == "cider-d") {
      cfg.metrics.cider_variant = CiderVariant::cider_d;
    } else if (variant == "cider") {
      cfg.metrics.cider_variant = CiderVariant::cider;
    } else {
      throw config_error("metrics.cider_variant must be cider-d|cider");
    }
    cfg.metrics.bleu_smoothing = get_or<bool>(node, "bleu_smoothing", false);
  }
  if (doc.contains("expand_demo")) {
    const json& node = doc["expand_demo"];
    require_keys(node, {"blocks", "added", "dim", "heads", "ffn", "vocab", "max_seq", "seed"},
                 "expand_demo");
    cfg.expand_demo.spec.n_blocks = get_or<int>(node, "blocks", cfg.expand_demo.spec.n_blocks);
    cfg.expand_demo.spec.d_model = get_or<int>(node, "dim", cfg.expand_demo.spec.d_model);
    cfg.expand_demo.spec.n_heads = get_or<int>(node, "heads", cfg.expand_demo.spec.n_heads);
    cfg.expand_demo.spec.d_ffn = get_or<int>(node, "ffn", cfg.expand_demo.spec.d_ffn);
    cfg.expand_demo.spec.vocab = get_or<int>(node, "vocab", cfg.expand_demo.spec.vocab);
    cfg.expand_demo.spec.max_seq = get_or<int>(node, "max_seq", cfg.expand_demo.spec.max_seq);
    cfg.expand_demo.added = get_or<int>(node, "added", cfg.expand_demo.added);
    cfg.expand_demo.seed = get_or<std::uint64_t>(node, "seed", cfg.expand_demo.seed);
  }
  if (doc.contains("logging")) {
    const json& node = doc["logging"];
    require_keys(node, {"verbosity"}, "logging");
    const std::string level = get_or<std::string>(node, "verbosity", "info");
    if (level == "error") cfg.log_verbosity = 0;
    else if (level == "warn") cfg.log_verbosity = 1;
    else if (level == "info") cfg.log_verbosity = 2;
    else if (level == "debug") cfg.log_verbosity = 3;
    else throw config_error("logging.verbosity must be error|warn|info|debug");
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw config_error("cannot parse config " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

json config_to_json(const PipelineConfig& cfg) {
  const char* verbosity = cfg.log_verbosity == 0   ? "error"
                          : cfg.log_verbosity == 1 ? "warn"
                          : cfg.log_verbosity == 3 ? "debug"
                                                   : "info";
  return json{
      {"paths",
       {{"annotations", cfg.paths.annotations.string()},
        {"frames", cfg.paths.frames.string()},
        {"output", cfg.paths.output.string()}}},
      {"selection",
       {{"thr_p", cfg.selection.thresholds.thr_p},
        {"thr_v", cfg.selection.thresholds.thr_v},
        {"invert", cfg.selection.invert},
        {"excluded_views", cfg.selection.excluded_views}}},
      {"render",
       {{"box_scale", cfg.render.box_scale},
        {"crop_scale", cfg.render.crop_scale},
        {"crop_from_augmented", cfg.render.crop_from_augmented},
        {"style",
         {{"pedestrian_color",
           {cfg.render.style.pedestrian_color.r, cfg.render.style.pedestrian_color.g,
            cfg.render.style.pedestrian_color.b}},
          {"vehicle_color",
           {cfg.render.style.vehicle_color.r, cfg.render.style.vehicle_color.g,
            cfg.render.style.vehicle_color.b}},
          {"line_thickness", cfg.render.style.line_thickness}}}}},
      {"dataset",
       {{"mode", to_string(cfg.dataset_mode)}, {"classifier", cfg.dataset_classifier}}},
      {"endpoint",
       {{"url", cfg.endpoint.url},
        {"path", cfg.endpoint.path},
        {"model", cfg.endpoint.model},
        {"temperature", cfg.endpoint.temperature},
        {"max_tokens", cfg.endpoint.max_tokens},
        {"max_attempts", cfg.endpoint.max_attempts},
        {"retry_base_ms", cfg.endpoint.retry_base_ms},
        {"timeout_sec", cfg.endpoint.timeout_sec},
        {"payload_limit_bytes", cfg.endpoint.payload_limit_bytes},
        {"token_env", cfg.endpoint.token_env}}},
      {"infer",
       {{"mode", to_string(cfg.infer_mode)},
        {"parallelism", cfg.parallelism},
        {"views", to_string(cfg.chat_options.parts)},
        {"resend_images", cfg.chat_options.resend_images}}},
      {"metrics",
       {{"cider_variant",
         cfg.metrics.cider_variant == CiderVariant::cider_d ? "cider-d" : "cider"},
        {"bleu_smoothing", cfg.metrics.bleu_smoothing}}},
      {"expand_demo",
       {{"blocks", cfg.expand_demo.spec.n_blocks},
        {"added", cfg.expand_demo.added},
        {"dim", cfg.expand_demo.spec.d_model},
        {"heads", cfg.expand_demo.spec.n_heads},
        {"ffn", cfg.expand_demo.spec.d_ffn},
        {"vocab", cfg.expand_demo.spec.vocab},
        {"max_seq", cfg.expand_demo.spec.max_seq},
        {"seed", cfg.expand_demo.seed}}},
      {"logging", {{"verbosity", verbosity}}}};
}

const char* to_string(Stage s) {
  switch (s) {
    case Stage::select: return "select";
    case Stage::render: return "render";
    case Stage::build_dataset: return "build-dataset";
    case Stage::infer: return "infer";
    case Stage::score: return "score";
    case Stage::expand_demo: return "expand-demo";
  }
  return "unknown";
}

std::map<std::string, RenderedViews> RenderManifest::as_view_map() const {
  std::map<std::string, RenderedViews> out;
  for (const ManifestEntry& entry : entries) {
    out[entry.id] = RenderedViews{entry.global, entry.local};
  }
  return out;
}

RenderManifest load_manifest(const fs::path& path) {
  const json doc = json::parse(read_file(path));
  RenderManifest manifest;
  manifest.fingerprint = doc.value("fingerprint", std::string());
  for (const json& node : doc.at("entries")) {
    ManifestEntry entry;
    entry.id = node.at("id").get<std::string>();
    entry.scenario_id = node.at("scenario_id").get<std::string>();
    entry.view_id = node.at("view_id").get<std::string>();
    entry.phase_index = node.at("phase_index").get<int>();
    entry.global = node.at("global").get<std::string>();
    if (node.contains("local") && !node["local"].is_null()) {
      entry.local = node["local"].get<std::string>();
    }
    entry.global_only = node.value("global_only", false);
    entry.frame_fallback = node.value("frame_fallback", false);
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

json manifest_to_json(const RenderManifest& manifest) {
  json entries = json::array();
  for (const ManifestEntry& entry : manifest.entries) {
    entries.push_back({{"id", entry.id},
                       {"scenario_id", entry.scenario_id},
                       {"view_id", entry.view_id},
                       {"phase_index", entry.phase_index},
                       {"global", entry.global},
                       {"local", entry.local ? json(*entry.local) : json(nullptr)},
                       {"global_only", entry.global_only},
                       {"frame_fallback", entry.frame_fallback}});
  }
  return json{{"fingerprint", manifest.fingerprint}, {"entries", std::move(entries)}};
}

namespace {

struct StageContext {
  const PipelineConfig& cfg;
  fs::path out;

  fs::path report_path(Stage stage) const {
    return out / "reports" / (std::string(to_string(stage)) + ".json");
  }
};

// Hash of everything that shapes stage output content: the non-path config
// sections plus the annotation bytes. Paths only move artifacts around, and
// artifact-internal references are all relative, so they stay out of the
// fingerprint to keep outputs byte-stable across checkouts. The endpoint
// URL is connection plumbing (ports vary per run) and is dropped too.
std::string stage_fingerprint(const PipelineConfig& cfg, Stage stage,
                              const std::string& extra = {}) {
  json reduced = config_to_json(cfg);
  reduced.erase("paths");
  reduced["endpoint"].erase("url");
  std::uint64_t h = fnv1a64(reduced.dump());
  h = fnv1a64(to_string(stage), h);
  if (fs::is_regular_file(cfg.paths.annotations)) {
    h = fnv1a64(read_file(cfg.paths.annotations), h);
  } else if (fs::is_directory(cfg.paths.annotations)) {
    std::vector<fs::path> files;
    for (const fs::directory_entry& entry : fs::directory_iterator(cfg.paths.annotations)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      h = fnv1a64(file.filename().string(), h);
      h = fnv1a64(read_file(file), h);
    }
  }
  if (!extra.empty()) {
    h = fnv1a64(extra, h);
  }
  return to_hex(h);
}

bool outputs_up_to_date(const StageContext& ctx, Stage stage, const std::string& fingerprint,
                        const std::vector<fs::path>& outputs) {
  if (ctx.cfg.force) {
    return false;
  }
  const fs::path report_path = ctx.report_path(stage);
  if (!fs::exists(report_path)) {
    return false;
  }
  try {
    const json report = json::parse(read_file(report_path));
    if (report.value("fingerprint", std::string()) != fingerprint) {
      return false;
    }
  } catch (const std::exception&) {
    return false;
  }
  return std::all_of(outputs.begin(), outputs.end(),
                     [](const fs::path& p) { return fs::exists(p); });
}

StageReport finish(const StageContext& ctx, Stage stage, bool ok, bool skipped,
                   const std::string& fingerprint, json details) {
  StageReport report;
  report.stage = to_string(stage);
  report.ok = ok;
  report.skipped = skipped;
  report.details = std::move(details);
  json doc{{"stage", report.stage},
           {"ok", report.ok},
           {"skipped", report.skipped},
           {"fingerprint", fingerprint},
           {"details", report.details}};
  write_file(ctx.report_path(stage), doc.dump(2) + "\n");
  logging::info("stage_done", {{"stage", report.stage}, {"ok", ok}, {"skipped", skipped}});
  return report;
}

ParseResult parse_annotations_checked(const PipelineConfig& cfg) {
  if (cfg.paths.annotations.empty() || !fs::exists(cfg.paths.annotations)) {
    throw config_error("annotations path not found: " + cfg.paths.annotations.string());
  }
  ParseResult parsed = parse_corpus(cfg.paths.annotations);
  for (const Diagnostic& diag : parsed.diagnostics) {
    logging::warn("annotation_diagnostic", {{"path", diag.path}, {"message", diag.message}});
  }
  return parsed;
}

json diagnostics_to_json(const std::vector<Diagnostic>& diagnostics) {
  json out = json::array();
  for (const Diagnostic& d : diagnostics) {
    out.push_back({{"path", d.path}, {"message", d.message}});
  }
  return out;
}

StageReport run_select(const StageContext& ctx) {
  const std::string fingerprint = stage_fingerprint(ctx.cfg, Stage::select);
  const fs::path report_file = ctx.out / "selection_report.json";
  const fs::path views_file = ctx.out / "test_views.json";
  if (outputs_up_to_date(ctx, Stage::select, fingerprint, {report_file, views_file})) {
    return finish(ctx, Stage::select, true, true, fingerprint, {{"rewritten", 0}});
  }
  const ParseResult parsed = parse_annotations_checked(ctx.cfg);
  const SelectionReport report = filter_training_set(parsed.corpus, ctx.cfg.selection);
  write_file(report_file, selection_report_to_json(report).dump(2) + "\n");

  json selections = json::array();
  json warnings = json::array();
  for (const ScenarioRecord& scenario : parsed.corpus.scenarios) {
    if (scenario.views.empty()) {
      warnings.push_back("scenario " + scenario.scenario_id + " has no views");
      continue;
    }
    const BestView best = select_best_test_view(scenario);
    if (best.fallback) {
      warnings.push_back("scenario " + scenario.scenario_id +
                         ": no view with pedestrian boxes in all five phases; fell back to " +
                         best.view_id);
    }
    selections.push_back({{"scenario_id", scenario.scenario_id},
                          {"view_id", best.view_id},
                          {"fallback", best.fallback}});
  }
  write_file(views_file,
             json{{"selections", selections}, {"warnings", warnings}}.dump(2) + "\n");
  return finish(ctx, Stage::select, true, false, fingerprint,
                {{"kept", report.kept.size()},
                 {"dropped", report.dropped.size()},
                 {"scenarios", parsed.corpus.scenarios.size()},
                 {"diagnostics", diagnostics_to_json(parsed.diagnostics)}});
}

StageReport run_render(const StageContext& ctx) {
  if (ctx.cfg.paths.frames.empty() || !fs::exists(ctx.cfg.paths.frames)) {
    throw config_error("frames path not found: " + ctx.cfg.paths.frames.string());
  }
  const std::string fingerprint = stage_fingerprint(ctx.cfg, Stage::render);
  const fs::path manifest_path = ctx.out / "render_manifest.json";

  if (!ctx.cfg.force && fs::exists(manifest_path)) {
    try {
      const RenderManifest existing = load_manifest(manifest_path);
      if (existing.fingerprint == fingerprint) {
        const bool all_present =
            std::all_of(existing.entries.begin(), existing.entries.end(),
                        [&](const ManifestEntry& e) {
                          return fs::exists(ctx.out / e.global) &&
                                 (!e.local || fs::exists(ctx.out / *e.local));
                        });
        if (all_present) {
          return finish(ctx, Stage::render, true, true, fingerprint,
                        {{"rewritten", 0}, {"skipped", existing.entries.size()}});
        }
      }
    } catch (const std::exception&) {
      // fall through to a full rewrite
    }
  }

  const ParseResult parsed = parse_annotations_checked(ctx.cfg);
  RenderManifest manifest;
  manifest.fingerprint = fingerprint;
  std::vector<Diagnostic> diagnostics = parsed.diagnostics;
  std::size_t written = 0;

  for (const ScenarioRecord& scenario : parsed.corpus.scenarios) {
    for (const ViewRecord& view : scenario.views) {
      for (const SegmentTuple& tuple : view.segments) {
        const FrameChoice choice = select_frame(tuple);
        const FrameRef& frame_ref = tuple.frames[choice.frame_pos];
        cv::Mat frame;
        try {
          frame = load_frame(ctx.cfg.paths.frames / frame_ref.image);
        } catch (const std::exception& e) {
          diagnostics.push_back({tuple.id(), e.what()});
          continue;
        }
        const std::string rel_dir = scenario.scenario_id + "/" + view.view_id;
        const std::string base = "phase" + std::to_string(tuple.phase_index);
        ManifestEntry entry;
        entry.id = tuple.id();
        entry.scenario_id = scenario.scenario_id;
        entry.view_id = view.view_id;
        entry.phase_index = tuple.phase_index;
        entry.frame_fallback = choice.fallback;
        entry.global = rel_dir + "/" + base + "_global.png";

        if (!frame_ref.ped_box && !frame_ref.veh_box) {
          // No boxes at all: emit the bare frame, flagged global-only.
          save_png(ctx.out / entry.global, frame);
          entry.global_only = true;
          diagnostics.push_back({tuple.id(), "no boxes on selected frame; emitted global-only"});
          ++written;
          manifest.entries.push_back(std::move(entry));
          continue;
        }
        try {
          const JointViews views =
              build_joint_views(frame, frame_ref.ped_box, frame_ref.veh_box, ctx.cfg.render);
          save_png(ctx.out / entry.global, views.global);
          entry.local = rel_dir + "/" + base + "_local.png";
          save_png(ctx.out / *entry.local, views.local);
          written += 2;
        } catch (const degenerate_crop_error& e) {
          const cv::Mat global = draw_prompt(
              frame,
              frame_ref.ped_box ? std::optional<Box>(scale_box(*frame_ref.ped_box,
                                                               ctx.cfg.render.box_scale))
                                : std::nullopt,
              frame_ref.veh_box ? std::optional<Box>(scale_box(*frame_ref.veh_box,
                                                               ctx.cfg.render.box_scale))
                                : std::nullopt,
              ctx.cfg.render.style);
          save_png(ctx.out / entry.global, global);
          entry.global_only = true;
          diagnostics.push_back({tuple.id(), std::string("crop degenerate (") + e.what() +
                                                 "); emitted global-only"});
          ++written;
        }
        manifest.entries.push_back(std::move(entry));
      }
    }
  }

  write_file(manifest_path, manifest_to_json(manifest).dump(2) + "\n");
  return finish(ctx, Stage::render, true, false, fingerprint,
                {{"rewritten", written},
                 {"entries", manifest.entries.size()},
                 {"diagnostics", diagnostics_to_json(diagnostics)}});
}

StageReport run_build_dataset(const StageContext& ctx) {
  const fs::path manifest_path = ctx.out / "render_manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("render manifest not found; run render first");
  }
  const std::string fingerprint =
      stage_fingerprint(ctx.cfg, Stage::build_dataset, read_file(manifest_path));
  const fs::path dataset_path = ctx.out / "dataset.json";
  if (outputs_up_to_date(ctx, Stage::build_dataset, fingerprint, {dataset_path})) {
    return finish(ctx, Stage::build_dataset, true, true, fingerprint, {{"rewritten", 0}});
  }

  const ParseResult parsed = parse_annotations_checked(ctx.cfg);
  const RenderManifest manifest = load_manifest(manifest_path);
  const std::vector<const SegmentTuple*> kept = kept_tuples(parsed.corpus, ctx.cfg.selection);

  std::unique_ptr<SentenceClassifier> classifier;
  if (ctx.cfg.dataset_classifier == "remote") {
    if (ctx.cfg.endpoint.url.empty()) {
      throw config_error("dataset.classifier=remote requires endpoint.url");
    }
    const EndpointConfig endpoint = ctx.cfg.endpoint;
    classifier = std::make_unique<RemoteClassifier>([endpoint](const std::string& prompt) {
      return chat(endpoint, {ChatTurn::user(prompt)});
    });
  }
  const DatasetBuildResult built = assemble_dataset(
      kept, manifest.as_view_map(), ctx.cfg.dataset_mode, ctx.out, classifier.get());
  for (const Diagnostic& diag : built.diagnostics) {
    logging::warn("dataset_diagnostic", {{"path", diag.path}, {"message", diag.message}});
  }
  write_file(dataset_path, dataset_to_json(built.records).dump(2) + "\n");
  return finish(ctx, Stage::build_dataset, true, false, fingerprint,
                {{"records", built.records.size()},
                 {"kept_tuples", kept.size()},
                 {"mode", to_string(ctx.cfg.dataset_mode)},
                 {"diagnostics", diagnostics_to_json(built.diagnostics)}});
}

StageReport run_infer(const StageContext& ctx) {
  const fs::path manifest_path = ctx.out / "render_manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("render manifest not found; run render first");
  }
  if (ctx.cfg.endpoint.url.empty()) {
    throw config_error("endpoint.url is required for infer");
  }
  const std::string fingerprint =
      stage_fingerprint(ctx.cfg, Stage::infer, read_file(manifest_path));
  const fs::path predictions_path = ctx.out / "predictions.json";
  if (outputs_up_to_date(ctx, Stage::infer, fingerprint, {predictions_path})) {
    return finish(ctx, Stage::infer, true, true, fingerprint, {{"rewritten", 0}});
  }

  const ParseResult parsed = parse_annotations_checked(ctx.cfg);
  const RenderManifest manifest = load_manifest(manifest_path);
  std::map<std::string, const ManifestEntry*> by_id;
  for (const ManifestEntry& entry : manifest.entries) {
    by_id[entry.id] = &entry;
  }

  std::vector<SegmentInput> inputs;
  std::vector<Perspective> perspectives;
  std::vector<Diagnostic> diagnostics;
  for (const ScenarioRecord& scenario : parsed.corpus.scenarios) {
    if (scenario.views.empty()) continue;
    const BestView best = select_best_test_view(scenario);
    for (const ViewRecord& view : scenario.views) {
      if (view.view_id != best.view_id) continue;
      for (const SegmentTuple& tuple : view.segments) {
        const auto it = by_id.find(tuple.id());
        if (it == by_id.end()) {
          diagnostics.push_back({tuple.id(), "not present in render manifest"});
          continue;
        }
        SegmentInput input;
        input.scenario_id = scenario.scenario_id;
        input.phase_index = tuple.phase_index;
        input.global_image = read_file(ctx.out / it->second->global);
        if (it->second->local) {
          input.local_image = read_file(ctx.out / *it->second->local);
        }
        inputs.push_back(std::move(input));
        perspectives.push_back(view.perspective);
      }
    }
  }

  // All best views of one batch share a perspective in practice; templates
  // are resolved per segment anyway.
  BatchResult batch;
  {
    std::vector<CaptionPair> pairs;
    std::vector<SegmentFailure> failures;
    // Group segments by perspective to keep run_batch's template argument exact.
    for (const Perspective perspective : {Perspective::overhead, Perspective::vehicle}) {
      std::vector<SegmentInput> subset;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (perspectives[i] == perspective) {
          subset.push_back(inputs[i]);
        }
      }
      if (subset.empty()) continue;
      const PromptPerspective pp = perspective == Perspective::vehicle
                                       ? PromptPerspective::ego
                                       : PromptPerspective::overhead;
      const QuestionTemplates templates{build_long_prompt(Role::pedestrian, pp),
                                        build_long_prompt(Role::vehicle, pp)};
      BatchResult part = run_batch(ctx.cfg.endpoint, subset, ctx.cfg.infer_mode, templates,
                                   ctx.cfg.chat_options, ctx.cfg.parallelism);
      pairs.insert(pairs.end(), part.pairs.begin(), part.pairs.end());
      failures.insert(failures.end(), part.failures.begin(), part.failures.end());
    }
    batch.pairs = std::move(pairs);
    batch.failures = std::move(failures);
  }
  std::sort(batch.pairs.begin(), batch.pairs.end(),
            [](const CaptionPair& a, const CaptionPair& b) {
              return std::tie(a.scenario_id, a.phase_index) <
                     std::tie(b.scenario_id, b.phase_index);
            });

  std::vector<Prediction> predictions;
  for (const CaptionPair& pair : batch.pairs) {
    predictions.push_back(Prediction{pair.scenario_id, pair.phase_index,
                                     pair.pedestrian_caption, pair.vehicle_caption});
  }
  write_file(predictions_path, predictions_to_json(predictions).dump(2) + "\n");

  json failures = json::array();
  for (const SegmentFailure& failure : batch.failures) {
    failures.push_back({{"scenario_id", failure.scenario_id},
                        {"phase_index", failure.phase_index},
                        {"role", failure.role},
                        {"message", failure.message}});
  }
  const bool ok = batch.failures.empty();
  return finish(ctx, Stage::infer, ok, false, fingerprint,
                {{"predictions", predictions.size()},
                 {"failures", std::move(failures)},
                 {"mode", to_string(ctx.cfg.infer_mode)},
                 {"diagnostics", diagnostics_to_json(diagnostics)}});
}

StageReport run_score(const StageContext& ctx) {
  const fs::path predictions_path = ctx.out / "predictions.json";
  if (!fs::exists(predictions_path)) {
    throw std::runtime_error("predictions not found; run infer first");
  }
  const std::string fingerprint =
      stage_fingerprint(ctx.cfg, Stage::score, read_file(predictions_path));
  const fs::path card_json = ctx.out / "scorecard.json";
  const fs::path card_csv = ctx.out / "scorecard.csv";
  if (outputs_up_to_date(ctx, Stage::score, fingerprint, {card_json, card_csv})) {
    return finish(ctx, Stage::score, true, true, fingerprint, {{"rewritten", 0}});
  }

  const ParseResult parsed = parse_annotations_checked(ctx.cfg);
  const std::vector<Prediction> predictions =
      predictions_from_json(json::parse(read_file(predictions_path)));
  const ScoreCard card = evaluate_run(predictions, parsed.corpus, ctx.cfg.metrics);
  write_file(card_json, scorecard_to_json(card).dump(2) + "\n");
  write_file(card_csv, scorecard_to_csv(card));
  return finish(ctx, Stage::score, true, false, fingerprint,
                {{"items", card.overall.items}, {"composite", card.overall.composite}});
}

StageReport run_expand_demo(const StageContext& ctx) {
  const TransformerSpec& spec = ctx.cfg.expand_demo.spec;
  const ExpansionPlan plan = plan_expansion(spec, ctx.cfg.expand_demo.added);
  const ToyModel model = random_model(spec, ctx.cfg.expand_demo.seed);
  const ToyModel expanded = expand(model, plan);

  std::mt19937_64 rng(ctx.cfg.expand_demo.seed ^ 0x9e3779b97f4a7c15ull);
  double max_residual = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    std::uniform_int_distribution<int> len_dist(1, std::min(spec.max_seq, 12));
    std::uniform_int_distribution<int> tok_dist(0, spec.vocab - 1);
    std::vector<int> tokens(static_cast<std::size_t>(len_dist(rng)));
    for (int& t : tokens) {
      t = tok_dist(rng);
    }
    const Eigen::MatrixXd base = forward(model, tokens);
    const Eigen::MatrixXd grown = forward(expanded, tokens);
    max_residual = std::max(max_residual, (base - grown).cwiseAbs().maxCoeff());
  }

  const long long base_params = count_params(spec);
  TransformerSpec expanded_spec = spec;
  expanded_spec.n_blocks += plan.added();
  const long long expanded_params = count_params(expanded_spec);

  json insertion = json::array();
  for (int idx : plan.insertion_indices) {
    insertion.push_back(idx);
  }
  return finish(ctx, Stage::expand_demo, true, false,
                stage_fingerprint(ctx.cfg, Stage::expand_demo),
                {{"base_depth", spec.n_blocks},
                 {"expanded_depth", expanded_spec.n_blocks},
                 {"group_size", plan.group_size},
                 {"insertion_indices", std::move(insertion)},
                 {"base_params", base_params},
                 {"expanded_params", expanded_params},
                 {"added_params", expanded_params - base_params},
                 {"per_block_params", per_block_param_count(spec)},
                 {"identity_residual", max_residual}});
}

}  // namespace

StageReport run_stage(Stage stage, const PipelineConfig& config) {
  logging::set_verbosity(static_cast<logging::Level>(config.log_verbosity));
  if (config.paths.output.empty()) {
    throw config_error("paths.output is required");
  }
  StageContext ctx{config, config.paths.output};
  fs::create_directories(ctx.out);
  switch (stage) {
    case Stage::select: return run_select(ctx);
    case Stage::render: return run_render(ctx);
    case Stage::build_dataset: return run_build_dataset(ctx);
    case Stage::infer: return run_infer(ctx);
    case Stage::score: return run_score(ctx);
    case Stage::expand_demo: return run_expand_demo(ctx);
  }
  throw std::logic_error("unhandled stage");
}

std::vector<StageReport> run_all(const PipelineConfig& config) {
  std::vector<StageReport> reports;
  for (Stage stage : {Stage::select, Stage::render, Stage::build_dataset, Stage::infer,
                      Stage::score}) {
    reports.push_back(run_stage(stage, config));
    if (!reports.back().ok) {
      break;
    }
  }
  return reports;
}

}  // namespace citypipe
