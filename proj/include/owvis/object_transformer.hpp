#pragma once

#include "owvis/config.hpp"
#include "owvis/module.hpp"
#include "owvis/prompt_encoder.hpp"

namespace owvis {

// Clip features at 1/4 spatial resolution, flattened time-major: row
// index ((ti * h) + y) * w + x.
struct FeatureMap {
  int t = 0, h = 0, w = 0;
  Tensor feat;  // (t*h*w, C)
  Tensor pos;   // (t*h*w, C) positional code (frozen Fourier + time row)
};

// Final-layer predictions for one clip. Query rows are ordered closed-world
// first, then open-world. obj_logits is undefined when n_ow == 0.
struct ClipOutput {
  FeatureMap fmap;
  Tensor queries;      // (n_cw + n_ow, C)
  Tensor cls_logits;   // (n_cw, num_classes + 1); last column = "no object"
  Tensor obj_logits;   // (n_ow, 1) open-world objectness
  Tensor mask_logits;  // (n_cw + n_ow, t*h*w)
  Tensor boxes;        // (n_cw + n_ow, 4), normalized (cx, cy, w, h)
  int n_cw = 0, n_ow = 0;
  int n() const { return n_cw + n_ow; }
};

// Additive attention mask from predicted region logits: 0 where the region
// (logit > 0) covers a location, -inf elsewhere; rows whose region is empty
// fall back to all zeros (full attention). Output is a plain constant.
Tensor layer_attention_mask(const Tensor& mask_logits);

// Query decoder over clip features. Each layer runs masked cross-attention
// (queries read the features, restricted to the region the previous layer
// predicted for them), then self-attention and a feedforward block whose
// output projections start at zero so a fresh layer is an exact residual
// identity around the cross-attention.
class ObjectTransformer {
 public:
  ObjectTransformer() = default;
  ObjectTransformer(ParamSet& ps, Rng& rng, const Config& cfg);

  int n_cw() const { return n_cw_; }
  int n_ow() const { return n_ow_; }
  int dim() const { return dim_; }

  // frames is a rank-4 (t, h, w, 3) tensor; h and w must be divisible by 4.
  FeatureMap encode_pixels(const Tensor& frames) const;
  ClipOutput forward_clip(const Tensor& frames, bool layer_masks = true) const;

 private:
  struct DecoderLayer {
    ParamPtr wq, wk, wv;         // cross-attention projections
    LayerNormLayer self_ln;
    ParamPtr sq, sk, sv, so;     // self-attention; so starts at zero
    LayerNormLayer ffn_ln;
    Mlp2 ffn;                    // second map starts at zero
  };

  Tensor head_mask_logits(const Tensor& queries, const FeatureMap& fmap) const;

  int dim_ = 0, layers_ = 0, n_cw_ = 0, n_ow_ = 0, num_classes_ = 0, clip_len_ = 0;
  LinearLayer conv1_, conv2_;  // stride-2 3x3 convolutions as patch affine maps
  LayerNormLayer feat_ln_;
  ParamPtr pos_freq_;    // frozen Fourier frequencies for (x, y)
  ParamPtr time_embed_;  // (clip_len, C) learned per-frame code
  ParamPtr cw_queries_;  // (n_cw, C) learned query seeds
  PromptEncoder prompts_;
  std::vector<DecoderLayer> dec_;
  LinearLayer cls_head_, obj_head_;
  Mlp2 mask_head_, box_head_;
};

}  // namespace owvis
