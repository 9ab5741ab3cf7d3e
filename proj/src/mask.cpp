#include "owvis/mask.hpp"

#include <algorithm>

namespace owvis {

int64_t BinaryMask::area() const {
  int64_t n = 0;
  for (uint8_t v : data) n += (v != 0);
  return n;
}

std::vector<int> rle_encode(const BinaryMask& m) {
  std::vector<int> counts;
  uint8_t current = 0;  // encoding starts with a zero run
  int run = 0;
  for (uint8_t v : m.data) {
    uint8_t bit = (v != 0);
    if (bit == current) {
      ++run;
    } else {
      counts.push_back(run);
      current = bit;
      run = 1;
    }
  }
  counts.push_back(run);
  if (m.data.empty()) counts.assign({0});
  return counts;
}

BinaryMask rle_decode(const std::vector<int>& counts, int h, int w) {
  if (h < 0 || w < 0) throw Error("bad-rle", "negative mask extents");
  BinaryMask m(h, w);
  int64_t total = static_cast<int64_t>(h) * w;
  int64_t pos = 0;
  uint8_t current = 0;
  for (int c : counts) {
    if (c < 0) throw Error("bad-rle", "negative run length");
    if (pos + c > total) throw Error("bad-rle", "runs exceed mask size");
    if (current) std::fill(m.data.begin() + pos, m.data.begin() + pos + c, uint8_t{1});
    pos += c;
    current = !current;
  }
  if (pos != total) throw Error("bad-rle", "runs do not cover mask");
  return m;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.h != b.h || a.w != b.w) throw Error("shape-mismatch", "mask extents differ");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    bool pa = a.data[i] != 0, pb = b.data[i] != 0;
    inter += (pa && pb);
    uni += (pa || pb);
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

NormBox tight_bbox(const BinaryMask& m) {
  int x0 = m.w, x1 = -1, y0 = m.h, y1 = -1;
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) {
      if (m.at(y, x)) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
  }
  NormBox b;
  if (x1 < 0) return b;
  b.w = static_cast<double>(x1 - x0 + 1) / m.w;
  b.h = static_cast<double>(y1 - y0 + 1) / m.h;
  b.cx = (x0 + (x1 - x0 + 1) * 0.5) / m.w;
  b.cy = (y0 + (y1 - y0 + 1) * 0.5) / m.h;
  return b;
}

BinaryMask downsample_majority(const BinaryMask& m, int stride) {
  if (stride <= 0 || m.h % stride != 0 || m.w % stride != 0)
    throw Error("bad-shape", "mask extents not divisible by stride");
  BinaryMask out(m.h / stride, m.w / stride);
  int cell = stride * stride;
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      int ones = 0;
      for (int dy = 0; dy < stride; ++dy)
        for (int dx = 0; dx < stride; ++dx) ones += (m.at(y * stride + dy, x * stride + dx) != 0);
      out.set(y, x, 2 * ones >= cell ? 1 : 0);
    }
  }
  return out;
}

BinaryMask upsample_nearest(const BinaryMask& m, int stride) {
  if (stride <= 0) throw Error("bad-shape", "nonpositive upsample stride");
  BinaryMask out(m.h * stride, m.w * stride);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.set(y, x, m.at(y / stride, x / stride));
  return out;
}

}  // namespace owvis
