#pragma once

#include "owvis/config.hpp"
#include "owvis/module.hpp"
#include "owvis/object_transformer.hpp"

namespace owvis {

// Object-centric captioner. A shared canvas of learned text embeddings is
// refined together with one object query: the combined rows cross-attend to
// the clip features, restricted to the object's region, then the refined
// rows serve as the memory a small autoregressive decoder reads while
// emitting tokens.
class CaptionHead {
 public:
  // Per-clip key/value projections, shared across the objects of the clip.
  struct Context {
    std::vector<Tensor> k, v;  // one (P, C) pair per refinement layer
    int p = 0;
  };

  CaptionHead() = default;
  // decoder_mode "frozen-random" freezes the token decoder at its random
  // initialization (the refinement layers and text canvas still train);
  // "trainable" trains everything.
  CaptionHead(ParamSet& ps, Rng& rng, const Config& cfg, int vocab_size);

  int dim() const { return dim_; }
  int n_text() const { return ntext_; }
  int vocab_size() const { return vocab_; }
  int max_len() const { return max_len_; }
  int memory_rows() const { return ntext_ + 1; }

  Context make_context(const FeatureMap& fmap) const;

  // Additive attention rows for one object: 0 where its binary region
  // covers a location, -inf elsewhere, broadcast to `rows` identical rows.
  // An all-empty region falls back to full attention (all zeros).
  static Tensor region_attention_mask(const std::vector<uint8_t>& region, int rows);

  // query_row (1, C) + text canvas -> refined memory (1 + n_text, C).
  Tensor object_memory(const Tensor& query_row, const Context& ctx,
                       const Tensor& add_mask) const;

  // Teacher-forced next-token logits (len(input_ids), vocab). Position t
  // sees input tokens 0..t only. Errors: "bad-shape" when the sequence
  // exceeds the decode budget or is empty.
  Tensor caption_logits(const Tensor& memory, const std::vector<int>& input_ids) const;

  // Greedy decode from <bos>; returns emitted ids (ends with <eos> when it
  // fires within the budget). Ties pick the lowest token id.
  std::vector<int> decode_greedy(const Tensor& memory) const;

 private:
  struct RefineLayer {
    ParamPtr wq, wk, wv;
    LayerNormLayer self_ln;
    ParamPtr sq, sk, sv, so;
    LayerNormLayer ffn_ln;
    Mlp2 ffn;
  };

  int dim_ = 0, ntext_ = 0, vocab_ = 0, max_len_ = 0;
  ParamPtr text_;  // (n_text, C) learned canvas
  std::vector<RefineLayer> refine_;
  // single-block token decoder
  ParamPtr tok_, pos_;
  LayerNormLayer ln1_, ln2_, ln3_;
  ParamPtr dsq_, dsk_, dsv_, dso_;  // causal self-attention
  ParamPtr dcq_, dck_, dcv_, dco_;  // cross-attention to the memory
  Mlp2 dffn_;
  LinearLayer out_;
};

}  // namespace owvis
