#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "citypipe/corpus.hpp"

namespace citypipe {

struct SelectionThresholds {
  double thr_p = 0.0;  // pedestrian area threshold, px^2
  double thr_v = 0.0;  // vehicle area threshold, px^2
};

enum class DropCase {
  both_exceed,                      // A_p > thr_p and A_v > thr_v
  pedestrian_exceeds_vehicle_absent,  // A_p > thr_p and A_v = 0
  vehicle_exceeds_pedestrian_absent,  // A_v > thr_v and A_p = 0
  inverted_otherwise,               // kept by the formula, dropped under invert
  excluded_view,                    // view not among the recommended perspectives
};

const char* to_string(DropCase c);

struct SelectionOptions {
  SelectionThresholds thresholds;
  // Flips the three-clause filter verdict (see filter_training_tuple).
  bool invert = false;
  // view_ids excluded regardless of areas; merged with per-view
  // recommended=false flags from the annotations.
  std::vector<std::string> excluded_views;
};

// Three-clause area filter, evaluated literally: drops (returns false) when
//   (A_p > thr_p and A_v > thr_v) or
//   (A_p > thr_p and A_v = 0)     or
//   (A_v > thr_v and A_p = 0),
// keeps otherwise.
bool filter_training_tuple(double area_p, double area_v, const SelectionThresholds& thr);

struct SelectionReport {
  std::vector<std::string> kept;
  std::vector<std::pair<std::string, DropCase>> dropped;
};

// Applies average_area + filter_training_tuple to every segment of the
// corpus, dropping segments of excluded / non-recommended views outright.
SelectionReport filter_training_set(const Corpus& corpus, const SelectionOptions& options);

// Pointers into `corpus` for the kept tuples, in report order.
std::vector<const SegmentTuple*> kept_tuples(const Corpus& corpus,
                                             const SelectionOptions& options);

struct BestView {
  std::string view_id;
  bool fallback = false;  // no view carried pedestrian boxes in all five phases
};

// The view with pedestrian boxes in all five phases and the largest mean
// pedestrian area; falls back to the largest mean area overall. Ties break
// toward the lexicographically smallest view_id.
BestView select_best_test_view(const ScenarioRecord& scenario);

nlohmann::json selection_report_to_json(const SelectionReport& report);

}  // namespace citypipe
