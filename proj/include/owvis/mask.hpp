#pragma once

#include <cstdint>
#include <vector>

#include "owvis/common.hpp"

namespace owvis {

// Dense row-major 0/1 mask.
struct BinaryMask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h_, int w_) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_, 0) {}

  uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
  void set(int y, int x, uint8_t v) { data[static_cast<size_t>(y) * w + x] = v; }
  int64_t area() const;
  bool empty() const { return area() == 0; }
};

// Run-length encoding over the row-major flattening: alternating run
// lengths of zeros and ones, always starting with the zero run (which may
// be 0). Runs sum to h*w.
std::vector<int> rle_encode(const BinaryMask& m);

// Errors: "bad-rle" when counts are negative or do not sum to h*w.
BinaryMask rle_decode(const std::vector<int>& counts, int h, int w);

// Intersection over union; two empty masks give 0.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

// Axis-aligned box, normalized to [0,1] by the mask extents.
struct NormBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
};

// Tight box around the nonzero pixels. Empty mask gives the zero box.
NormBox tight_bbox(const BinaryMask& m);

// Block pooling to a stride-times-smaller grid; a cell is 1 when at least
// half of its source pixels are 1. Extents must be divisible by stride.
BinaryMask downsample_majority(const BinaryMask& m, int stride);

// Nearest-neighbor upsampling by an integer factor.
BinaryMask upsample_nearest(const BinaryMask& m, int stride);

}  // namespace owvis
