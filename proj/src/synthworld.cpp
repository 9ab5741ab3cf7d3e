#include "owvis/synthworld.hpp"

#include <algorithm>
#include <cmath>

namespace owvis {
namespace {

struct ObjectState {
  int class_id = 0;
  int color_id = 0;
  double radius = 0.0;
  double cx0 = 0.0, cy0 = 0.0;
  int vx = 0, vy = 0;
  int hide_from = -1, hide_until = -1;  // hidden on frames in [hide_from, hide_until)
  bool caption_present = true;
};

bool covers(const std::string& shape, double dx, double dy, double r) {
  if (shape == "square") return std::abs(dx) <= r && std::abs(dy) <= r;
  if (shape == "circle") return dx * dx + dy * dy <= r * r;
  if (shape == "triangle")  // apex up, base down
    return std::abs(dy) <= r && std::abs(dx) <= (dy + r) * 0.5;
  if (shape == "cross")
    return (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) ||
           (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
  if (shape == "ring") {
    double d2 = dx * dx + dy * dy;
    return d2 <= r * r && d2 >= (r * 0.5) * (r * 0.5);
  }
  if (shape == "bar") return std::abs(dx) <= r && std::abs(dy) <= r / 3.0;
  throw Error("bad-config", "unknown shape class: " + shape);
}

}  // namespace

std::array<double, 3> color_rgb(const std::string& name) {
  if (name == "red") return {1.0, 0.0, 0.0};
  if (name == "green") return {0.0, 1.0, 0.0};
  if (name == "blue") return {0.0, 0.0, 1.0};
  if (name == "yellow") return {1.0, 1.0, 0.0};
  if (name == "magenta") return {1.0, 0.0, 1.0};
  if (name == "cyan") return {0.0, 1.0, 1.0};
  if (name == "orange") return {1.0, 0.5, 0.0};
  if (name == "purple") return {0.5, 0.0, 1.0};
  throw Error("bad-config", "unknown color: " + name);
}

std::string direction_word(int vx, int vy) {
  if (vx == 0 && vy == 0) return "still";
  if (std::abs(vx) >= std::abs(vy)) return vx > 0 ? "right" : "left";
  return vy > 0 ? "down" : "up";
}

VideoSample generate_video(const WorldSpec& spec, const std::vector<int>& class_pool,
                           const std::vector<int>& required_classes, uint64_t seed) {
  if (spec.frame_size <= 0 || spec.num_frames <= 0 || spec.max_objects <= 0)
    throw Error("bad-config", "world extents must be positive");
  if (class_pool.empty()) throw Error("bad-config", "empty class pool");
  for (int c : class_pool)
    if (c < 0 || c >= static_cast<int>(spec.shape_classes.size()))
      throw Error("bad-config", "class id outside shape list");

  Rng rng(seed);
  const int size = spec.frame_size;
  const int T = spec.num_frames;

  int min_objects = std::min(2, spec.max_objects);
  int n = rng.uniform_int(min_objects, spec.max_objects);
  n = std::max(n, static_cast<int>(required_classes.size()));

  std::vector<ObjectState> objects(n);
  for (int i = 0; i < n; ++i) {
    ObjectState& o = objects[i];
    o.class_id = i < static_cast<int>(required_classes.size())
                     ? required_classes[i]
                     : class_pool[rng.uniform_int(0, static_cast<int>(class_pool.size()) - 1)];
    o.color_id = rng.uniform_int(0, static_cast<int>(spec.colors.size()) - 1);
    o.radius = rng.uniform(size / 16.0, size / 8.0);
    double margin = o.radius + 1.0;
    o.cx0 = rng.uniform(margin, size - margin);
    o.cy0 = rng.uniform(margin, size - margin);
    o.vx = rng.uniform_int(-spec.max_speed, spec.max_speed);
    o.vy = rng.uniform_int(-spec.max_speed, spec.max_speed);
    o.caption_present = rng.uniform() < spec.caption_present_prob;
    if (T >= 6 && rng.uniform() < spec.occlusion_prob) {
      // Hide for a short mid-video stretch; always reappear before the end.
      o.hide_from = rng.uniform_int(2, T - 4);
      int len = rng.uniform_int(1, 2);
      o.hide_until = std::min(o.hide_from + len, T - 2);
    }
  }

  VideoSample v;
  v.t = T;
  v.h = size;
  v.w = size;
  v.frames.assign(static_cast<size_t>(T) * size * size * 3, 0.0f);
  v.gt.resize(T);

  std::vector<BinaryMask> visible(n);
  for (int t = 0; t < T; ++t) {
    for (auto& m : visible) m = BinaryMask(size, size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        int top = -1;
        for (int i = 0; i < n; ++i) {  // later objects are in front
          const ObjectState& o = objects[i];
          if (o.hide_from >= 0 && t >= o.hide_from && t < o.hide_until) continue;
          double dx = (x + 0.5) - (o.cx0 + o.vx * t);
          double dy = (y + 0.5) - (o.cy0 + o.vy * t);
          if (covers(spec.shape_classes[o.class_id], dx, dy, o.radius)) top = i;
        }
        if (top >= 0) {
          visible[top].set(y, x, 1);
          auto rgb = color_rgb(spec.colors[objects[top].color_id]);
          size_t base = ((static_cast<size_t>(t) * size + y) * size + x) * 3;
          for (int c = 0; c < 3; ++c) v.frames[base + c] = static_cast<float>(rgb[c]);
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      if (visible[i].empty()) continue;
      FrameObject fo;
      fo.track_id = i;
      fo.class_id = objects[i].class_id;
      fo.mask = visible[i];
      fo.box = tight_bbox(visible[i]);
      fo.caption = {"a", spec.colors[objects[i].color_id],
                    spec.shape_classes[objects[i].class_id], "moving",
                    direction_word(objects[i].vx, objects[i].vy)};
      fo.caption_present = objects[i].caption_present;
      v.gt[t].push_back(std::move(fo));
    }
  }
  return v;
}

}  // namespace owvis
