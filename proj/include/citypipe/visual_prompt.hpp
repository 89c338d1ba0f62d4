#pragma once

#include <cstddef>
#include <optional>

#include <opencv2/core.hpp>

#include "citypipe/corpus.hpp"
#include "citypipe/geometry.hpp"

namespace citypipe {

struct Rgb {
  int r = 0;
  int g = 0;
  int b = 0;
  bool operator==(const Rgb&) const = default;
};

struct PromptStyle {
  Rgb pedestrian_color{0, 255, 0};
  Rgb vehicle_color{0, 0, 255};
  int line_thickness = 0;  // 0 = auto from frame width
};

// max(2, round(0.004 * frame_width))
int auto_line_thickness(int frame_width);

struct JointViews {
  cv::Mat global;   // augmented full frame
  cv::Mat local;    // cropped view
  PixelRect crop_box;  // crop rect within the global frame
};

struct RenderConfig {
  double box_scale = 1.2;   // applied to each subject box before drawing
  double crop_scale = 1.5;  // applied to the union box before cropping
  PromptStyle style;
  bool crop_from_augmented = true;
};

struct FrameChoice {
  std::size_t frame_pos = 0;  // position within tuple.frames
  bool fallback = false;      // first frame lacked the boxes
};

// First-frame rule: frame 0 when it carries a box; otherwise the earliest
// frame carrying both boxes, then the earliest carrying either.
FrameChoice select_frame(const SegmentTuple& tuple);

// Loads a PNG/JPEG frame as 8-bit BGR. Throws on failure.
cv::Mat load_frame(const std::filesystem::path& path);

// Lossless PNG write with fixed encoder settings.
void save_png(const std::filesystem::path& path, const cv::Mat& image);

// Copies the pixel sub-rectangle. `rect` must lie within the frame.
cv::Mat crop_frame(const cv::Mat& frame, const PixelRect& rect);

// Returns a copy of `frame` with outlined rectangles for the given
// (already scaled) boxes: pedestrian first, vehicle second. The stroke
// band lies inside the box rect and is clipped at frame edges.
cv::Mat draw_prompt(const cv::Mat& frame, const std::optional<Box>& ped,
                    const std::optional<Box>& veh, const PromptStyle& style);

// Scales the boxes, draws the global view, and crops the local view from
// it. Throws std::invalid_argument when neither box is present and
// degenerate_crop_error when the crop leaves the frame entirely.
JointViews build_joint_views(const cv::Mat& frame, const std::optional<Box>& ped,
                             const std::optional<Box>& veh, const RenderConfig& cfg);

}  // namespace citypipe
