#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "owvis/mask.hpp"
#include "owvis/rng.hpp"
#include "owvis/vocab.hpp"

namespace owvis {

// Parameters of the procedural video world.
struct WorldSpec {
  int frame_size = 64;  // frames are square: frame_size x frame_size
  int num_frames = 8;
  std::vector<std::string> shape_classes = {"square", "circle", "triangle",
                                            "cross",  "ring",   "bar"};
  std::vector<std::string> colors = {"red",     "green",  "blue",   "yellow",
                                     "magenta", "cyan",   "orange", "purple"};
  int max_objects = 4;
  int max_speed = 2;             // integer pixels per frame, per axis
  double occlusion_prob = 0.25;  // chance an object hides mid-video and returns
  double caption_present_prob = 1.0;
  uint64_t seed = 1;
};

// RGB in [0,1] for a palette color name. Errors: "bad-config" for unknown names.
std::array<double, 3> color_rgb(const std::string& name);

// Ground truth for one object on one frame. Only objects with at least one
// visible pixel get a record.
struct FrameObject {
  int track_id = 0;
  int class_id = 0;
  BinaryMask mask;  // visible region at full resolution
  NormBox box;      // tight box around the visible region
  std::vector<std::string> caption;  // template words, no specials
  bool caption_present = true;
};

// A rendered video with per-frame ground truth.
struct VideoSample {
  int t = 0, h = 0, w = 0;
  std::vector<float> frames;  // t*h*w*3, RGB in [0,1], row-major per frame
  std::vector<std::vector<FrameObject>> gt;  // gt[t] lists visible objects

  float pixel(int ti, int y, int x, int c) const {
    return frames[((static_cast<size_t>(ti) * h + y) * w + x) * 3 + c];
  }
};

// Renders one video. Objects move with constant integer velocity and are
// rasterized exactly at pixel centers; later-created objects occlude earlier
// ones. class_pool lists the class ids objects may take; the first
// required_classes.size() objects are forced to those classes (the object
// count is raised to fit). Deterministic in seed.
VideoSample generate_video(const WorldSpec& spec, const std::vector<int>& class_pool,
                           const std::vector<int>& required_classes, uint64_t seed);

// Caption motion word for an integer velocity: "still" when both components
// are zero, otherwise the dominant axis wins (ties go to the x axis) and the
// word is left/right for x or up/down for y (y grows downward).
std::string direction_word(int vx, int vy);

}  // namespace owvis
