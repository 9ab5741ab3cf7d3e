#pragma once

#include "owvis/caption_head.hpp"
#include "owvis/config.hpp"
#include "owvis/object_transformer.hpp"
#include "owvis/synthworld.hpp"
#include "owvis/vocab.hpp"

namespace owvis {

// The full system: query decoder plus captioner, with one parameter set.
// Construction is deterministic in cfg.seed.
class Model {
 public:
  Model() = default;
  Model(const Config& cfg, const Vocabulary& vocab);

  const Config& cfg() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const ObjectTransformer& transformer() const { return transformer_; }
  const CaptionHead& captions() const { return captions_; }

  // Clip frames as a rank-4 (len, h, w, 3) constant tensor. Positions past
  // the end of the video repeat the final frame (clip padding).
  static Tensor frames_tensor(const VideoSample& v, int start, int len);

 private:
  Config cfg_;
  Vocabulary vocab_;
  ParamSet params_;
  ObjectTransformer transformer_;
  CaptionHead captions_;
};

}  // namespace owvis
