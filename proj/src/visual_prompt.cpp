#include "citypipe/visual_prompt.hpp"

#include <algorithm>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>

#include "citypipe/log.hpp"

namespace citypipe {

namespace {

// Outline band of thickness t inset inside the rounded box rect, clipped
// to the frame. Pixels are painted in BGR order.
void paint_outline(cv::Mat& image, const Box& box, const Rgb& color, int thickness) {
  const int width = image.cols;
  const int height = image.rows;
  const int x0 = static_cast<int>(round_half_away(box.x));
  const int y0 = static_cast<int>(round_half_away(box.y));
  const int x1 = x0 + static_cast<int>(round_half_away(box.w));
  const int y1 = y0 + static_cast<int>(round_half_away(box.h));
  const cv::Vec3b bgr(static_cast<unsigned char>(color.b),
                      static_cast<unsigned char>(color.g),
                      static_cast<unsigned char>(color.r));
  const int px0 = std::max(x0, 0);
  const int py0 = std::max(y0, 0);
  const int px1 = std::min(x1, width);
  const int py1 = std::min(y1, height);
  for (int py = py0; py < py1; ++py) {
    for (int px = px0; px < px1; ++px) {
      const bool on_band = px < x0 + thickness || px >= x1 - thickness ||
                           py < y0 + thickness || py >= y1 - thickness;
      if (on_band) {
        image.at<cv::Vec3b>(py, px) = bgr;
      }
    }
  }
}

}  // namespace

int auto_line_thickness(int frame_width) {
  return std::max(2, static_cast<int>(round_half_away(0.004 * frame_width)));
}

FrameChoice select_frame(const SegmentTuple& tuple) {
  if (tuple.frames.empty()) {
    throw std::invalid_argument("segment '" + tuple.id() + "' has no frames");
  }
  const auto has_any = [](const FrameRef& f) { return f.ped_box || f.veh_box; };
  const auto has_both = [](const FrameRef& f) { return f.ped_box && f.veh_box; };
  if (has_any(tuple.frames.front())) {
    return FrameChoice{0, false};
  }
  for (std::size_t i = 0; i < tuple.frames.size(); ++i) {
    if (has_both(tuple.frames[i])) {
      logging::warn("frame_fallback", {{"segment", tuple.id()}, {"frame", i}});
      return FrameChoice{i, true};
    }
  }
  for (std::size_t i = 0; i < tuple.frames.size(); ++i) {
    if (has_any(tuple.frames[i])) {
      logging::warn("frame_fallback", {{"segment", tuple.id()}, {"frame", i}});
      return FrameChoice{i, true};
    }
  }
  // No frame carries a box; the first-frame rule applies unchanged.
  return FrameChoice{0, false};
}

cv::Mat load_frame(const std::filesystem::path& path) {
  cv::Mat image = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (image.empty()) {
    throw std::runtime_error("cannot read image: " + path.string());
  }
  return image;
}

void save_png(const std::filesystem::path& path, const cv::Mat& image) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 3};
  if (!cv::imwrite(path.string(), image, params)) {
    throw std::runtime_error("cannot write image: " + path.string());
  }
}

cv::Mat crop_frame(const cv::Mat& frame, const PixelRect& rect) {
  if (rect.w <= 0 || rect.h <= 0 || rect.x < 0 || rect.y < 0 ||
      rect.x + rect.w > frame.cols || rect.y + rect.h > frame.rows) {
    throw std::invalid_argument("crop rect outside frame bounds");
  }
  return frame(cv::Rect(rect.x, rect.y, rect.w, rect.h)).clone();
}

cv::Mat draw_prompt(const cv::Mat& frame, const std::optional<Box>& ped,
                    const std::optional<Box>& veh, const PromptStyle& style) {
  CV_Assert(frame.type() == CV_8UC3);
  cv::Mat out = frame.clone();
  const int thickness =
      style.line_thickness > 0 ? style.line_thickness : auto_line_thickness(frame.cols);
  if (ped) {
    paint_outline(out, *ped, style.pedestrian_color, thickness);
  }
  if (veh) {
    paint_outline(out, *veh, style.vehicle_color, thickness);
  }
  return out;
}

JointViews build_joint_views(const cv::Mat& frame, const std::optional<Box>& ped,
                             const std::optional<Box>& veh, const RenderConfig& cfg) {
  if (!ped && !veh) {
    throw std::invalid_argument("joint views need at least one box");
  }
  const std::optional<Box> ped_scaled =
      ped ? std::optional<Box>(scale_box(*ped, cfg.box_scale)) : std::nullopt;
  const std::optional<Box> veh_scaled =
      veh ? std::optional<Box>(scale_box(*veh, cfg.box_scale)) : std::nullopt;

  JointViews views;
  views.global = draw_prompt(frame, ped_scaled, veh_scaled, cfg.style);

  const Box first = ped_scaled ? *ped_scaled : *veh_scaled;
  const Box second = veh_scaled ? *veh_scaled : *ped_scaled;
  const FrameDims dims{static_cast<double>(frame.cols), static_cast<double>(frame.rows)};
  const Box crop = crop_view(first, second, cfg.crop_scale, dims);
  views.crop_box = to_pixel_rect(crop, frame.cols, frame.rows);
  views.local = crop_frame(cfg.crop_from_augmented ? views.global : frame, views.crop_box);
  return views;
}

}  // namespace citypipe
