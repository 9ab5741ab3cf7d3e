#include "owvis/model.hpp"

namespace owvis {

Model::Model(const Config& cfg, const Vocabulary& vocab) : cfg_(cfg), vocab_(vocab) {
  cfg_.validate();
  Rng rng(Rng::mix(cfg.seed, 0xa11c0de5ull));
  transformer_ = ObjectTransformer(params_, rng, cfg_);
  captions_ = CaptionHead(params_, rng, cfg_, vocab_.size());
}

Tensor Model::frames_tensor(const VideoSample& v, int start, int len) {
  if (start < 0 || start >= v.t || len < 1)
    throw Error("bad-shape", "clip start outside the video");
  std::vector<double> data(static_cast<size_t>(len) * v.h * v.w * 3);
  const size_t frame_numel = static_cast<size_t>(v.h) * v.w * 3;
  for (int dt = 0; dt < len; ++dt) {
    int src = std::min(start + dt, v.t - 1);  // repeat the final frame
    for (size_t i = 0; i < frame_numel; ++i)
      data[dt * frame_numel + i] = v.frames[src * frame_numel + i];
  }
  apply_precision(data);
  return Tensor({len, v.h, v.w, 3}, std::move(data));
}

}  // namespace owvis
