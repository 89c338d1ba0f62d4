#include "citypipe/geometry.hpp"

#include <algorithm>
#include <string>

namespace citypipe {

Box scale_box(const Box& b, double c) {
  if (c <= 0.0 || !std::isfinite(c)) {
    throw std::invalid_argument("scale coefficient must be positive, got " + std::to_string(c));
  }
  return Box{b.x + b.w / 2.0 - c * b.w / 2.0,
             b.y + b.h / 2.0 - c * b.h / 2.0,
             c * b.w,
             c * b.h};
}

Box union_crop(const Box& a, const Box& b) {
  const double x_min = std::min(a.x, b.x);
  const double y_min = std::min(a.y, b.y);
  const double x_max = std::max(a.right(), b.right());
  const double y_max = std::max(a.bottom(), b.bottom());
  return Box{x_min, y_min, x_max - x_min, y_max - y_min};
}

Box clamp_to_frame(const Box& b, const FrameDims& dims) {
  const double left = std::max(0.0, b.x);
  const double top = std::max(0.0, b.y);
  const double right = std::min(dims.width, b.right());
  const double bottom = std::min(dims.height, b.bottom());
  if (right - left <= 0.0 || bottom - top <= 0.0) {
    throw degenerate_crop_error("crop box lies entirely outside the frame");
  }
  return Box{left, top, right - left, bottom - top};
}

Box crop_view(const Box& ped, const Box& veh, double c_star, const FrameDims& dims) {
  return clamp_to_frame(scale_box(union_crop(ped, veh), c_star), dims);
}

double round_half_away(double v) {
  // std::round rounds halfway cases away from zero.
  return std::round(v);
}

PixelRect to_pixel_rect(const Box& b, int frame_width, int frame_height) {
  int x = static_cast<int>(round_half_away(b.x));
  int y = static_cast<int>(round_half_away(b.y));
  int w = static_cast<int>(round_half_away(b.w));
  int h = static_cast<int>(round_half_away(b.h));
  x = std::clamp(x, 0, frame_width);
  y = std::clamp(y, 0, frame_height);
  w = std::min(w, frame_width - x);
  h = std::min(h, frame_height - y);
  if (w <= 0 || h <= 0) {
    throw degenerate_crop_error("pixel rect rounds to zero area");
  }
  return PixelRect{x, y, w, h};
}

}  // namespace citypipe
