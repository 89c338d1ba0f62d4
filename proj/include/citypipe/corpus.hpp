#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "citypipe/geometry.hpp"

namespace citypipe {

enum class Perspective { overhead, vehicle };
enum class Source { WTS, BDD };

enum class Subject { pedestrian, vehicle };

const char* to_string(Perspective p);
const char* to_string(Source s);
Perspective perspective_from_string(const std::string& s);
Source source_from_string(const std::string& s);

// One annotated frame of a phase clip. Boxes are absent when the subject
// is not visible; area 0 is always a computed consequence, never stored.
struct FrameRef {
  int index = 0;
  std::string image;  // path relative to the frames root
  std::optional<Box> ped_box;
  std::optional<Box> veh_box;
};

// One phase clip with its descriptions and per-frame boxes.
struct SegmentTuple {
  std::string scenario_id;
  std::string view_id;
  int phase_index = 0;
  Perspective perspective = Perspective::vehicle;
  std::vector<FrameRef> frames;
  std::string pedestrian_caption;
  std::string vehicle_caption;

  std::string id() const;  // "<scenario>/<view>/phase<k>"
};

struct ViewRecord {
  std::string view_id;
  Perspective perspective = Perspective::vehicle;
  bool recommended = true;
  std::vector<SegmentTuple> segments;  // ordered by phase_index
};

struct ScenarioRecord {
  std::string scenario_id;
  Source source = Source::WTS;
  std::vector<ViewRecord> views;
};

struct Diagnostic {
  std::string path;     // file (and JSON location) the problem was found at
  std::string message;
};

struct Corpus {
  std::vector<ScenarioRecord> scenarios;

  std::size_t segment_count() const;
  const ScenarioRecord* find_scenario(const std::string& scenario_id) const;
};

struct ParseResult {
  Corpus corpus;
  std::vector<Diagnostic> diagnostics;
};

// Parses every *.json under root (sorted by path), or root itself when it
// is a regular file. Malformed documents produce diagnostics and are
// skipped; a missing root is fatal.
ParseResult parse_corpus(const std::filesystem::path& root);

// Parses one annotation document. `origin` names the source in diagnostics.
ParseResult parse_annotation_text(const std::string& text, const std::string& origin);

nlohmann::json corpus_to_json(const Corpus& corpus);

// Mean of w*h over frames where the subject's box is present; 0 when the
// subject's box is absent on every frame.
double average_area(const SegmentTuple& tuple, Subject subject);

}  // namespace citypipe
