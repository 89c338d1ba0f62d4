#include "citypipe/corpus.hpp"

#include <algorithm>
#include <set>

#include "citypipe/util.hpp"

namespace citypipe {

namespace {

using nlohmann::json;

struct DocContext {
  std::string origin;
  std::vector<Diagnostic>* diags = nullptr;

  void report(const std::string& where, const std::string& message) const {
    diags->push_back(Diagnostic{origin + where, message});
  }
};

std::optional<Box> parse_box(const json& node, const DocContext& ctx,
                             const std::string& where, const char* field) {
  if (node.is_null()) {
    return std::nullopt;
  }
  if (!node.is_array() || node.size() != 4 || !std::all_of(node.begin(), node.end(), [](const json& v) {
        return v.is_number();
      })) {
    ctx.report(where, std::string(field) + " must be null or [x,y,w,h]");
    return std::nullopt;
  }
  Box b{node[0].get<double>(), node[1].get<double>(), node[2].get<double>(), node[3].get<double>()};
  if (!std::isfinite(b.x) || !std::isfinite(b.y)) {
    ctx.report(where, std::string(field) + " has non-finite coordinates");
    return std::nullopt;
  }
  if (!(b.w > 0.0) || !std::isfinite(b.w)) {
    ctx.report(where, std::string(field) + "[2] (w) must be > 0, got " + node[2].dump());
    return std::nullopt;
  }
  if (!(b.h > 0.0) || !std::isfinite(b.h)) {
    ctx.report(where, std::string(field) + "[3] (h) must be > 0, got " + node[3].dump());
    return std::nullopt;
  }
  return b;
}

bool parse_frame(const json& node, const DocContext& ctx, const std::string& where,
                 FrameRef& out) {
  if (!node.is_object() || !node.contains("index") || !node.contains("image")) {
    ctx.report(where, "frame must be an object with index and image");
    return false;
  }
  if (!node["index"].is_number_integer() || !node["image"].is_string()) {
    ctx.report(where, "frame index must be an integer and image a string");
    return false;
  }
  const std::size_t diags_before = ctx.diags->size();
  FrameRef frame;
  frame.index = node["index"].get<int>();
  frame.image = node["image"].get<std::string>();
  frame.ped_box = node.contains("ped_box")
                      ? parse_box(node["ped_box"], ctx, where, "ped_box")
                      : std::nullopt;
  frame.veh_box = node.contains("veh_box")
                      ? parse_box(node["veh_box"], ctx, where, "veh_box")
                      : std::nullopt;
  if (ctx.diags->size() != diags_before) {
    return false;  // malformed box rejects the frame, not just the box
  }
  out = std::move(frame);
  return true;
}

bool parse_phase(const json& node, const DocContext& ctx, const std::string& where,
                 const ScenarioRecord& scenario, const ViewRecord& view,
                 SegmentTuple& out) {
  if (!node.is_object() || !node.contains("phase_index") || !node.contains("frames")) {
    ctx.report(where, "phase must be an object with phase_index and frames");
    return false;
  }
  if (!node["phase_index"].is_number_integer()) {
    ctx.report(where, "phase_index must be an integer");
    return false;
  }
  SegmentTuple tuple;
  tuple.scenario_id = scenario.scenario_id;
  tuple.view_id = view.view_id;
  tuple.perspective = view.perspective;
  tuple.phase_index = node["phase_index"].get<int>();
  if (tuple.phase_index < 0 || tuple.phase_index > 4) {
    ctx.report(where, "phase_index must be in [0,4], got " + std::to_string(tuple.phase_index));
    return false;
  }
  if (!node["frames"].is_array() || node["frames"].empty()) {
    ctx.report(where, "phase needs at least one frame");
    return false;
  }
  tuple.pedestrian_caption = node.value("pedestrian_caption", std::string());
  tuple.vehicle_caption = node.value("vehicle_caption", std::string());
  std::size_t frame_no = 0;
  for (const json& frame_node : node["frames"]) {
    FrameRef frame;
    if (!parse_frame(frame_node, ctx, where + "/frames[" + std::to_string(frame_no) + "]", frame)) {
      return false;
    }
    tuple.frames.push_back(std::move(frame));
    ++frame_no;
  }
  out = std::move(tuple);
  return true;
}

void parse_scenario(const json& node, const DocContext& ctx, const std::string& where,
                    std::vector<ScenarioRecord>& out) {
  if (!node.is_object() || !node.contains("scenario_id") || !node.contains("views")) {
    ctx.report(where, "scenario must be an object with scenario_id and views");
    return;
  }
  if (!node["scenario_id"].is_string() || !node["views"].is_array()) {
    ctx.report(where, "scenario_id must be a string and views an array");
    return;
  }
  ScenarioRecord scenario;
  scenario.scenario_id = node["scenario_id"].get<std::string>();
  try {
    scenario.source = source_from_string(node.value("source", std::string("WTS")));
  } catch (const std::exception& e) {
    ctx.report(where, e.what());
    return;
  }
  std::set<std::string> seen_views;
  std::size_t view_no = 0;
  for (const json& view_node : node["views"]) {
    const std::string view_where = where + "/views[" + std::to_string(view_no++) + "]";
    if (!view_node.is_object() || !view_node.contains("view_id") ||
        !view_node["view_id"].is_string()) {
      ctx.report(view_where, "view must be an object with a string view_id");
      continue;
    }
    ViewRecord view;
    view.view_id = view_node["view_id"].get<std::string>();
    if (!seen_views.insert(view.view_id).second) {
      ctx.report(view_where, "duplicate view_id '" + view.view_id + "' in scenario '" +
                                 scenario.scenario_id + "'");
      continue;
    }
    try {
      view.perspective = perspective_from_string(view_node.value("perspective", std::string("vehicle")));
    } catch (const std::exception& e) {
      ctx.report(view_where, e.what());
      continue;
    }
    if (scenario.source == Source::BDD && view.perspective != Perspective::vehicle) {
      ctx.report(view_where, "BDD scenarios carry vehicle-perspective views only");
      continue;
    }
    view.recommended = view_node.value("recommended", true);
    std::size_t phase_no = 0;
    for (const json& phase_node : view_node.value("phases", json::array())) {
      SegmentTuple tuple;
      if (parse_phase(phase_node, ctx,
                      view_where + "/phases[" + std::to_string(phase_no++) + "]", scenario,
                      view, tuple)) {
        view.segments.push_back(std::move(tuple));
      }
    }
    std::stable_sort(view.segments.begin(), view.segments.end(),
                     [](const SegmentTuple& a, const SegmentTuple& b) {
                       return a.phase_index < b.phase_index;
                     });
    scenario.views.push_back(std::move(view));
  }
  out.push_back(std::move(scenario));
}

json box_to_json(const std::optional<Box>& box) {
  if (!box) {
    return nullptr;
  }
  return json::array({box->x, box->y, box->w, box->h});
}

}  // namespace

const char* to_string(Perspective p) {
  return p == Perspective::overhead ? "overhead" : "vehicle";
}

const char* to_string(Source s) { return s == Source::WTS ? "WTS" : "BDD"; }

Perspective perspective_from_string(const std::string& s) {
  if (s == "overhead") return Perspective::overhead;
  if (s == "vehicle") return Perspective::vehicle;
  throw std::invalid_argument("unknown perspective '" + s + "' (expected overhead|vehicle)");
}

Source source_from_string(const std::string& s) {
  if (s == "WTS") return Source::WTS;
  if (s == "BDD") return Source::BDD;
  throw std::invalid_argument("unknown source '" + s + "' (expected WTS|BDD)");
}

std::string SegmentTuple::id() const {
  return scenario_id + "/" + view_id + "/phase" + std::to_string(phase_index);
}

std::size_t Corpus::segment_count() const {
  std::size_t n = 0;
  for (const ScenarioRecord& scenario : scenarios) {
    for (const ViewRecord& view : scenario.views) {
      n += view.segments.size();
    }
  }
  return n;
}

const ScenarioRecord* Corpus::find_scenario(const std::string& scenario_id) const {
  for (const ScenarioRecord& scenario : scenarios) {
    if (scenario.scenario_id == scenario_id) {
      return &scenario;
    }
  }
  return nullptr;
}

ParseResult parse_annotation_text(const std::string& text, const std::string& origin) {
  ParseResult result;
  DocContext ctx{origin, &result.diagnostics};
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    ctx.report("", std::string("invalid JSON: ") + e.what());
    return result;
  }
  if (!doc.is_array()) {
    ctx.report("", "annotation document must be a top-level array of scenarios");
    return result;
  }
  std::size_t scenario_no = 0;
  for (const json& scenario_node : doc) {
    parse_scenario(scenario_node, ctx, "#/" + std::to_string(scenario_no++),
                   result.corpus.scenarios);
  }
  return result;
}

ParseResult parse_corpus(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) {
    throw std::runtime_error("annotation root does not exist: " + root.string());
  }
  std::vector<fs::path> files;
  if (fs::is_regular_file(root)) {
    files.push_back(root);
  } else {
    for (const fs::directory_entry& entry : fs::directory_iterator(root)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
  }
  ParseResult result;
  for (const fs::path& file : files) {
    ParseResult part = parse_annotation_text(read_file(file), file.string());
    for (ScenarioRecord& scenario : part.corpus.scenarios) {
      result.corpus.scenarios.push_back(std::move(scenario));
    }
    for (Diagnostic& diag : part.diagnostics) {
      result.diagnostics.push_back(std::move(diag));
    }
  }
  return result;
}

nlohmann::json corpus_to_json(const Corpus& corpus) {
  json doc = json::array();
  for (const ScenarioRecord& scenario : corpus.scenarios) {
    json views = json::array();
    for (const ViewRecord& view : scenario.views) {
      json phases = json::array();
      for (const SegmentTuple& tuple : view.segments) {
        json frames = json::array();
        for (const FrameRef& frame : tuple.frames) {
          frames.push_back({{"index", frame.index},
                            {"image", frame.image},
                            {"ped_box", box_to_json(frame.ped_box)},
                            {"veh_box", box_to_json(frame.veh_box)}});
        }
        phases.push_back({{"phase_index", tuple.phase_index},
                          {"frames", std::move(frames)},
                          {"pedestrian_caption", tuple.pedestrian_caption},
                          {"vehicle_caption", tuple.vehicle_caption}});
      }
      views.push_back({{"view_id", view.view_id},
                       {"perspective", to_string(view.perspective)},
                       {"recommended", view.recommended},
                       {"phases", std::move(phases)}});
    }
    doc.push_back({{"scenario_id", scenario.scenario_id},
                   {"source", to_string(scenario.source)},
                   {"views", std::move(views)}});
  }
  return doc;
}

double average_area(const SegmentTuple& tuple, Subject subject) {
  double total = 0.0;
  std::size_t present = 0;
  for (const FrameRef& frame : tuple.frames) {
    const std::optional<Box>& box =
        subject == Subject::pedestrian ? frame.ped_box : frame.veh_box;
    if (box) {
      total += box->area();
      ++present;
    }
  }
  return present == 0 ? 0.0 : total / static_cast<double>(present);
}

}  // namespace citypipe
