#pragma once

#include <cmath>
#include <stdexcept>

namespace citypipe {

// Axis-aligned rectangle in pixel units. (x, y) is the top-left corner.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double center_x() const { return x + w / 2.0; }
  double center_y() const { return y + h / 2.0; }
  bool valid() const {
    return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y) &&
           std::isfinite(w) && std::isfinite(h);
  }
  bool operator==(const Box&) const = default;
};

struct FrameDims {
  double width = 0.0;
  double height = 0.0;
};

// Integer pixel rectangle, valid for direct image indexing.
struct PixelRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const PixelRect&) const = default;
};

struct degenerate_crop_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Grows (or shrinks) a box about its center by factor c.
Box scale_box(const Box& b, double c);

// Smallest rectangle containing both boxes.
Box union_crop(const Box& a, const Box& b);

// Intersection with [0,width] x [0,height]. Throws degenerate_crop_error
// when nothing remains inside the frame.
Box clamp_to_frame(const Box& b, const FrameDims& dims);

// Union of the two (already scaled) boxes, grown by c_star and clamped.
Box crop_view(const Box& ped, const Box& veh, double c_star, const FrameDims& dims);

// Half-away-from-zero rounding, applied only at pixel operations.
double round_half_away(double v);

// Rounds a clamped box to integer pixels, re-clamping so the rect stays
// inside a width x height frame. Throws degenerate_crop_error when the
// rounded rect has no area.
PixelRect to_pixel_rect(const Box& b, int frame_width, int frame_height);

}  // namespace citypipe
