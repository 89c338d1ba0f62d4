#include <random>

#include "doctest.h"

#include <opencv2/core.hpp>

#include "citypipe/visual_prompt.hpp"
#include "support/fixture.hpp"

using citypipe::Box;
using citypipe::FrameChoice;
using citypipe::PixelRect;
using citypipe::PromptStyle;
using citypipe::SegmentTuple;

namespace {

cv::Mat solid_frame(int width, int height, cv::Vec3b color) {
  cv::Mat frame(height, width, CV_8UC3);
  frame.setTo(color);
  return frame;
}

cv::Mat random_frame(int width, int height, std::mt19937_64& rng) {
  cv::Mat frame(height, width, CV_8UC3);
  std::uniform_int_distribution<int> dist(0, 255);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      frame.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<unsigned char>(dist(rng)),
                                            static_cast<unsigned char>(dist(rng)),
                                            static_cast<unsigned char>(dist(rng)));
    }
  }
  return frame;
}

bool images_equal(const cv::Mat& a, const cv::Mat& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.type() != b.type()) return false;
  for (int y = 0; y < a.rows; ++y) {
    for (int x = 0; x < a.cols; ++x) {
      if (a.at<cv::Vec3b>(y, x) != b.at<cv::Vec3b>(y, x)) return false;
    }
  }
  return true;
}

// Analytic outline mask of a drawn box: inside the rounded rect but not
// inside the rect deflated by the stroke thickness.
bool on_outline(const Box& box, int thickness, int x, int y) {
  const int x0 = static_cast<int>(citypipe::round_half_away(box.x));
  const int y0 = static_cast<int>(citypipe::round_half_away(box.y));
  const int x1 = x0 + static_cast<int>(citypipe::round_half_away(box.w));
  const int y1 = y0 + static_cast<int>(citypipe::round_half_away(box.h));
  if (x < x0 || x >= x1 || y < y0 || y >= y1) return false;
  return x < x0 + thickness || x >= x1 - thickness || y < y0 + thickness ||
         y >= y1 - thickness;
}

SegmentTuple tuple_with_frames(std::vector<std::pair<bool, bool>> boxes_per_frame) {
  SegmentTuple tuple;
  tuple.scenario_id = "s";
  tuple.view_id = "v";
  int index = 0;
  for (const auto& [ped, veh] : boxes_per_frame) {
    citypipe::FrameRef frame;
    frame.index = index;
    frame.image = "f" + std::to_string(index) + ".png";
    if (ped) frame.ped_box = Box{2, 2, 4, 4};
    if (veh) frame.veh_box = Box{8, 8, 4, 4};
    tuple.frames.push_back(frame);
    ++index;
  }
  return tuple;
}

}  // namespace

TEST_CASE("select_frame applies the first-frame rule with box fallbacks") {
  // boxes on frame 0 -> frame 0
  SegmentTuple boxes_first = tuple_with_frames({{true, true}, {true, true}});
  CHECK(citypipe::select_frame(boxes_first).frame_pos == 0);
  CHECK_FALSE(citypipe::select_frame(boxes_first).fallback);

  // boxes only on frame 3 -> frame 3 with a warning
  SegmentTuple late = tuple_with_frames({{false, false}, {false, false}, {false, false},
                                         {true, true}});
  const FrameChoice choice = citypipe::select_frame(late);
  CHECK(choice.frame_pos == 3);
  CHECK(choice.fallback);

  // earliest frame carrying either box when none has both
  SegmentTuple partial = tuple_with_frames({{false, false}, {false, true}, {true, false}});
  CHECK(citypipe::select_frame(partial).frame_pos == 1);

  // single-frame clip
  SegmentTuple single = tuple_with_frames({{true, false}});
  CHECK(citypipe::select_frame(single).frame_pos == 0);

  // no boxes anywhere: first frame, no fallback flag
  SegmentTuple bare = tuple_with_frames({{false, false}, {false, false}});
  CHECK(citypipe::select_frame(bare).frame_pos == 0);
  CHECK_FALSE(citypipe::select_frame(bare).fallback);

  SegmentTuple empty;
  empty.scenario_id = "s";
  empty.view_id = "v";
  CHECK_THROWS_AS(citypipe::select_frame(empty), std::invalid_argument);
}

TEST_CASE("draw_prompt with no boxes is a pixel-identical copy") {
  std::mt19937_64 rng(11);
  const cv::Mat frame = random_frame(32, 24, rng);
  const cv::Mat out = citypipe::draw_prompt(frame, std::nullopt, std::nullopt, PromptStyle{});
  CHECK(images_equal(frame, out));
  CHECK(out.data != frame.data);  // a copy, not a view
}

TEST_CASE("draw_prompt modifies exactly the analytic outline pixels") {
  const cv::Vec3b base(7, 9, 11);
  const cv::Mat frame = solid_frame(64, 48, base);
  PromptStyle style;
  style.line_thickness = 2;
  const Box ped{5.2, 6.7, 14.0, 10.0};
  const Box veh{30.0, 20.0, 18.0, 15.0};
  const cv::Mat out = citypipe::draw_prompt(frame, ped, veh, style);
  REQUIRE(out.cols == frame.cols);
  REQUIRE(out.rows == frame.rows);

  const cv::Vec3b green_bgr(0, 255, 0);
  const cv::Vec3b blue_bgr(255, 0, 0);
  for (int y = 0; y < out.rows; ++y) {
    for (int x = 0; x < out.cols; ++x) {
      const cv::Vec3b pixel = out.at<cv::Vec3b>(y, x);
      if (on_outline(veh, style.line_thickness, x, y)) {
        CHECK(pixel == blue_bgr);  // vehicle drawn second, wins overlaps
      } else if (on_outline(ped, style.line_thickness, x, y)) {
        CHECK(pixel == green_bgr);
      } else {
        CHECK(pixel == base);
      }
    }
  }
}

TEST_CASE("partially off-frame boxes only touch in-frame outline pixels") {
  const cv::Vec3b base(100, 100, 100);
  const cv::Mat frame = solid_frame(40, 30, base);
  PromptStyle style;
  style.line_thickness = 3;
  const Box ped{-6.0, -4.0, 16.0, 12.0};  // spills over the top-left corner
  const cv::Mat out = citypipe::draw_prompt(frame, ped, std::nullopt, style);
  int changed = 0;
  for (int y = 0; y < out.rows; ++y) {
    for (int x = 0; x < out.cols; ++x) {
      const bool expected = on_outline(ped, style.line_thickness, x, y);
      const bool is_changed = out.at<cv::Vec3b>(y, x) != base;
      CHECK(is_changed == expected);
      changed += is_changed ? 1 : 0;
    }
  }
  CHECK(changed > 0);
}

TEST_CASE("auto thickness follows the frame-width formula") {
  CHECK(citypipe::auto_line_thickness(64) == 2);
  CHECK(citypipe::auto_line_thickness(1000) == 4);
  CHECK(citypipe::auto_line_thickness(1920) == 8);
}

TEST_CASE("crop_frame equals the brute-force pixel copy") {
  std::mt19937_64 rng(12);
  const cv::Mat image = random_frame(4, 4, rng);
  const cv::Mat sub = citypipe::crop_frame(image, PixelRect{1, 1, 2, 2});
  REQUIRE(sub.cols == 2);
  REQUIRE(sub.rows == 2);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      CHECK(sub.at<cv::Vec3b>(y, x) == image.at<cv::Vec3b>(y + 1, x + 1));
    }
  }

  // full-frame crop is identical
  const cv::Mat full = citypipe::crop_frame(image, PixelRect{0, 0, 4, 4});
  CHECK(images_equal(full, image));

  // randomized crops against a per-pixel oracle
  std::uniform_int_distribution<int> dim(4, 64);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = dim(rng), h = dim(rng);
    const cv::Mat img = random_frame(w, h, rng);
    std::uniform_int_distribution<int> xs(0, w - 1), ys(0, h - 1);
    const int x0 = xs(rng), y0 = ys(rng);
    std::uniform_int_distribution<int> ws(1, w - x0), hs(1, h - y0);
    const PixelRect rect{x0, y0, ws(rng), hs(rng)};
    const cv::Mat crop = citypipe::crop_frame(img, rect);
    for (int y = 0; y < rect.h; ++y) {
      for (int x = 0; x < rect.w; ++x) {
        REQUIRE(crop.at<cv::Vec3b>(y, x) == img.at<cv::Vec3b>(y + rect.y, x + rect.x));
      }
    }
  }

  CHECK_THROWS_AS(citypipe::crop_frame(image, PixelRect{3, 3, 2, 2}), std::invalid_argument);
}

TEST_CASE("joint views compose drawing and cropping") {
  std::mt19937_64 rng(13);
  const cv::Mat frame = random_frame(64, 48, rng);
  citypipe::RenderConfig cfg;
  cfg.style.line_thickness = 1;

  const Box ped{10, 10, 12, 20};
  const Box veh{30, 15, 20, 16};
  const citypipe::JointViews views = citypipe::build_joint_views(frame, ped, veh, cfg);

  CHECK(views.global.cols == frame.cols);
  CHECK(views.global.rows == frame.rows);
  CHECK(views.local.cols == views.crop_box.w);
  CHECK(views.local.rows == views.crop_box.h);

  // local is a sub-image of the augmented global
  for (int y = 0; y < views.local.rows; ++y) {
    for (int x = 0; x < views.local.cols; ++x) {
      REQUIRE(views.local.at<cv::Vec3b>(y, x) ==
              views.global.at<cv::Vec3b>(y + views.crop_box.y, x + views.crop_box.x));
    }
  }

  // the crop contains both scaled boxes (clipped to the frame)
  for (const Box& box : {citypipe::scale_box(ped, cfg.box_scale),
                         citypipe::scale_box(veh, cfg.box_scale)}) {
    CHECK(views.crop_box.x <= std::max(0.0, box.x));
    CHECK(views.crop_box.y <= std::max(0.0, box.y));
    CHECK(views.crop_box.x + views.crop_box.w >= std::min(64.0, box.right()) - 1.0);
    CHECK(views.crop_box.y + views.crop_box.h >= std::min(48.0, box.bottom()) - 1.0);
  }

  // determinism: identical inputs give bit-identical images
  const citypipe::JointViews again = citypipe::build_joint_views(frame, ped, veh, cfg);
  CHECK(images_equal(views.global, again.global));
  CHECK(images_equal(views.local, again.local));
}

TEST_CASE("single-box joint views degenerate to that box") {
  std::mt19937_64 rng(14);
  const cv::Mat frame = random_frame(64, 48, rng);
  citypipe::RenderConfig cfg;
  cfg.style.line_thickness = 1;
  const Box ped{20, 12, 10, 10};
  const citypipe::JointViews views = citypipe::build_joint_views(frame, ped, std::nullopt, cfg);
  // crop = ped scaled by c then c*, clamped and rounded
  const Box expected = citypipe::crop_view(citypipe::scale_box(ped, cfg.box_scale),
                                           citypipe::scale_box(ped, cfg.box_scale),
                                           cfg.crop_scale, citypipe::FrameDims{64, 48});
  const PixelRect rect = citypipe::to_pixel_rect(expected, 64, 48);
  CHECK(views.crop_box == rect);

  CHECK_THROWS_AS(citypipe::build_joint_views(frame, std::nullopt, std::nullopt, cfg),
                  std::invalid_argument);
}

TEST_CASE("full-frame boxes with unit scales make local equal global") {
  std::mt19937_64 rng(15);
  const cv::Mat frame = random_frame(32, 32, rng);
  citypipe::RenderConfig cfg;
  cfg.box_scale = 1.0;
  cfg.crop_scale = 1.0;
  cfg.style.line_thickness = 1;
  const Box full{0, 0, 32, 32};
  const citypipe::JointViews views = citypipe::build_joint_views(frame, full, full, cfg);
  CHECK(images_equal(views.local, views.global));
}
