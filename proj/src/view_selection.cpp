#include "citypipe/view_selection.hpp"

#include <algorithm>
#include <set>

#include "citypipe/log.hpp"

namespace citypipe {

namespace {

enum class Verdict { keep, both_exceed, ped_only, veh_only };

Verdict literal_verdict(double area_p, double area_v, const SelectionThresholds& thr) {
  if (area_p > thr.thr_p && area_v > thr.thr_v) return Verdict::both_exceed;
  if (area_p > thr.thr_p && area_v == 0.0) return Verdict::ped_only;
  if (area_v > thr.thr_v && area_p == 0.0) return Verdict::veh_only;
  return Verdict::keep;
}

}  // namespace

const char* to_string(DropCase c) {
  switch (c) {
    case DropCase::both_exceed: return "both_exceed";
    case DropCase::pedestrian_exceeds_vehicle_absent: return "pedestrian_exceeds_vehicle_absent";
    case DropCase::vehicle_exceeds_pedestrian_absent: return "vehicle_exceeds_pedestrian_absent";
    case DropCase::inverted_otherwise: return "inverted_otherwise";
    case DropCase::excluded_view: return "excluded_view";
  }
  return "unknown";
}

bool filter_training_tuple(double area_p, double area_v, const SelectionThresholds& thr) {
  return literal_verdict(area_p, area_v, thr) == Verdict::keep;
}

SelectionReport filter_training_set(const Corpus& corpus, const SelectionOptions& options) {
  SelectionReport report;
  const std::set<std::string> excluded(options.excluded_views.begin(),
                                       options.excluded_views.end());
  for (const ScenarioRecord& scenario : corpus.scenarios) {
    for (const ViewRecord& view : scenario.views) {
      const bool view_excluded = !view.recommended || excluded.count(view.view_id) > 0;
      for (const SegmentTuple& tuple : view.segments) {
        if (view_excluded) {
          report.dropped.emplace_back(tuple.id(), DropCase::excluded_view);
          continue;
        }
        const double area_p = average_area(tuple, Subject::pedestrian);
        const double area_v = average_area(tuple, Subject::vehicle);
        const Verdict verdict = literal_verdict(area_p, area_v, options.thresholds);
        const bool keep = options.invert ? verdict != Verdict::keep : verdict == Verdict::keep;
        if (keep) {
          report.kept.push_back(tuple.id());
          continue;
        }
        switch (verdict) {
          case Verdict::both_exceed:
            report.dropped.emplace_back(tuple.id(), DropCase::both_exceed);
            break;
          case Verdict::ped_only:
            report.dropped.emplace_back(tuple.id(), DropCase::pedestrian_exceeds_vehicle_absent);
            break;
          case Verdict::veh_only:
            report.dropped.emplace_back(tuple.id(), DropCase::vehicle_exceeds_pedestrian_absent);
            break;
          case Verdict::keep:
            report.dropped.emplace_back(tuple.id(), DropCase::inverted_otherwise);
            break;
        }
      }
    }
  }
  return report;
}

std::vector<const SegmentTuple*> kept_tuples(const Corpus& corpus,
                                             const SelectionOptions& options) {
  const SelectionReport report = filter_training_set(corpus, options);
  const std::set<std::string> kept(report.kept.begin(), report.kept.end());
  std::vector<const SegmentTuple*> out;
  for (const ScenarioRecord& scenario : corpus.scenarios) {
    for (const ViewRecord& view : scenario.views) {
      for (const SegmentTuple& tuple : view.segments) {
        if (kept.count(tuple.id()) > 0) {
          out.push_back(&tuple);
        }
      }
    }
  }
  return out;
}

BestView select_best_test_view(const ScenarioRecord& scenario) {
  if (scenario.views.empty()) {
    throw std::invalid_argument("scenario '" + scenario.scenario_id + "' has no views");
  }

  const auto mean_ped_area = [](const ViewRecord& view) {
    if (view.segments.empty()) return 0.0;
    double total = 0.0;
    for (const SegmentTuple& tuple : view.segments) {
      total += average_area(tuple, Subject::pedestrian);
    }
    return total / static_cast<double>(view.segments.size());
  };

  const auto boxes_in_all_five_phases = [](const ViewRecord& view) {
    bool phase_has_box[5] = {false, false, false, false, false};
    for (const SegmentTuple& tuple : view.segments) {
      for (const FrameRef& frame : tuple.frames) {
        if (frame.ped_box) {
          phase_has_box[tuple.phase_index] = true;
          break;
        }
      }
    }
    return std::all_of(std::begin(phase_has_box), std::end(phase_has_box),
                       [](bool b) { return b; });
  };

  const ViewRecord* best = nullptr;
  double best_area = -1.0;
  for (const ViewRecord& view : scenario.views) {
    if (!boxes_in_all_five_phases(view)) continue;
    const double area = mean_ped_area(view);
    if (area > best_area || (area == best_area && best && view.view_id < best->view_id)) {
      best = &view;
      best_area = area;
    }
  }
  if (best) {
    return BestView{best->view_id, false};
  }

  // No view qualifies; fall back to the largest mean pedestrian area overall.
  for (const ViewRecord& view : scenario.views) {
    const double area = mean_ped_area(view);
    if (area > best_area || (area == best_area && best && view.view_id < best->view_id)) {
      best = &view;
      best_area = area;
    }
  }
  logging::warn("best_view_fallback", {{"scenario", scenario.scenario_id},
                                       {"view", best->view_id},
                                       {"reason", "no view has pedestrian boxes in all five phases"}});
  return BestView{best->view_id, true};
}

nlohmann::json selection_report_to_json(const SelectionReport& report) {
  nlohmann::json dropped = nlohmann::json::array();
  for (const auto& [id, drop_case] : report.dropped) {
    dropped.push_back({{"id", id}, {"case", to_string(drop_case)}});
  }
  return nlohmann::json{{"kept", report.kept}, {"dropped", std::move(dropped)}};
}

}  // namespace citypipe
