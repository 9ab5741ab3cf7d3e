#include "owvis/object_transformer.hpp"

#include <cmath>
#include <limits>

namespace owvis {

Tensor layer_attention_mask(const Tensor& mask_logits) {
  const int n = mask_logits.dim(0), p = mask_logits.dim(1);
  const std::vector<double>& v = mask_logits.values();
  std::vector<double> out(static_cast<size_t>(n) * p, 0.0);
  const double ninf = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    bool any = false;
    for (int j = 0; j < p; ++j) any |= v[static_cast<size_t>(i) * p + j] > 0.0;
    if (!any) continue;  // empty region: leave the row fully open
    for (int j = 0; j < p; ++j)
      if (!(v[static_cast<size_t>(i) * p + j] > 0.0)) out[static_cast<size_t>(i) * p + j] = ninf;
  }
  return Tensor({n, p}, std::move(out));
}

ObjectTransformer::ObjectTransformer(ParamSet& ps, Rng& rng, const Config& cfg)
    : dim_(cfg.model_dim),
      layers_(cfg.decoder_layers),
      n_cw_(cfg.n_cw_queries),
      n_ow_(cfg.use_open_queries ? cfg.ow_grid * cfg.ow_grid : 0),
      num_classes_(cfg.num_classes),
      clip_len_(cfg.clip_len) {
  const int C = dim_;
  conv1_ = LinearLayer(ps, rng, "enc.conv1", 3 * 3 * 3, C / 2);
  conv2_ = LinearLayer(ps, rng, "enc.conv2", 3 * 3 * (C / 2), C);
  feat_ln_ = LayerNormLayer(ps, "enc.ln", C);
  pos_freq_ = make_param(ps, rng, "enc.pos_freq", {C / 2, 2}, 1.0, /*frozen=*/true);
  time_embed_ = make_param(ps, rng, "enc.time", {clip_len_, C}, 0.02);
  cw_queries_ = make_param(ps, rng, "queries.cw", {n_cw_, C}, 1.0 / std::sqrt(C));
  if (cfg.use_open_queries)
    prompts_ = PromptEncoder(ps, rng, cfg.ow_grid, C, cfg.ow_fourier_scale);
  dec_.resize(layers_);
  double ps_scale = 1.0 / std::sqrt(static_cast<double>(C));
  for (int l = 0; l < layers_; ++l) {
    std::string base = "dec" + std::to_string(l);
    DecoderLayer& d = dec_[l];
    d.wq = make_param(ps, rng, base + ".cross.wq", {C, C}, ps_scale);
    d.wk = make_param(ps, rng, base + ".cross.wk", {C, C}, ps_scale);
    d.wv = make_param(ps, rng, base + ".cross.wv", {C, C}, ps_scale);
    d.self_ln = LayerNormLayer(ps, base + ".self.ln", C);
    d.sq = make_param(ps, rng, base + ".self.wq", {C, C}, ps_scale);
    d.sk = make_param(ps, rng, base + ".self.wk", {C, C}, ps_scale);
    d.sv = make_param(ps, rng, base + ".self.wv", {C, C}, ps_scale);
    d.so = make_const_param(ps, base + ".self.wo", {C, C}, 0.0);
    d.ffn_ln = LayerNormLayer(ps, base + ".ffn.ln", C);
    d.ffn = Mlp2(ps, rng, base + ".ffn", C, 4 * C, C, /*out_gain=*/0.0);
  }
  cls_head_ = LinearLayer(ps, rng, "head.cls", C, num_classes_ + 1);
  obj_head_ = LinearLayer(ps, rng, "head.obj", C, 1);
  // Start open-world proposals pessimistic so early training is not flooded.
  obj_head_.b->values()[0] = -2.0;
  mask_head_ = Mlp2(ps, rng, "head.mask", C, C, C);
  box_head_ = Mlp2(ps, rng, "head.box", C, C, 4);
}

FeatureMap ObjectTransformer::encode_pixels(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(3) != 3)
    throw Error("bad-shape", "frames must be (t, h, w, 3)");
  const int t = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
  if (h % 4 != 0 || w % 4 != 0)
    throw Error("bad-shape", "frame extents must be divisible by 4");
  if (t > clip_len_) throw Error("bad-shape", "clip longer than the configured length");
  const int C = dim_;
  const int h1 = h / 2, w1 = w / 2, h2 = h / 4, w2 = w / 4;

  Tensor x = gelu(conv1_(im2col(frames, 3, 3, 2, 1)));       // (t*h1*w1, C/2)
  x = reshape(x, {t, h1, w1, C / 2});
  x = gelu(conv2_(im2col(x, 3, 3, 2, 1)));                   // (t*h2*w2, C)
  FeatureMap fm;
  fm.t = t;
  fm.h = h2;
  fm.w = w2;
  fm.feat = feat_ln_(x);

  // Positional code: frozen Fourier lift of the cell center plus a learned
  // per-frame row.
  const int half = C / 2;
  const std::vector<double>& f = pos_freq_->values();
  std::vector<double> lift(static_cast<size_t>(t) * h2 * w2 * C);
  std::vector<int> frame_ids(static_cast<size_t>(t) * h2 * w2);
  size_t r = 0;
  for (int ti = 0; ti < t; ++ti)
    for (int y = 0; y < h2; ++y)
      for (int xi = 0; xi < w2; ++xi, ++r) {
        double px = (xi + 0.5) / w2, py = (y + 0.5) / h2;
        for (int j = 0; j < half; ++j) {
          double angle = 2.0 * M_PI * (f[2 * j] * px + f[2 * j + 1] * py);
          lift[r * C + j] = std::sin(angle);
          lift[r * C + half + j] = std::cos(angle);
        }
        frame_ids[r] = ti;
      }
  apply_precision(lift);
  Tensor fourier({t * h2 * w2, C}, std::move(lift));
  fm.pos = add(fourier, embedding_rows(time_embed_->use(), frame_ids));
  return fm;
}

Tensor ObjectTransformer::head_mask_logits(const Tensor& queries, const FeatureMap& fmap) const {
  return matmul(mask_head_(queries), transpose(fmap.feat));
}

ClipOutput ObjectTransformer::forward_clip(const Tensor& frames, bool layer_masks) const {
  ClipOutput out;
  out.fmap = encode_pixels(frames);
  out.n_cw = n_cw_;
  out.n_ow = n_ow_;
  const int n = out.n();
  const int P = out.fmap.t * out.fmap.h * out.fmap.w;
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(dim_));

  Tensor x = cw_queries_->use();
  if (n_ow_ > 0) x = concat_rows(x, prompts_.encode());

  Tensor kin = add(out.fmap.feat, out.fmap.pos);
  Tensor self_mask = Tensor::zeros({n, n});
  for (int l = 0; l < layers_; ++l) {
    const DecoderLayer& d = dec_[l];
    // Region mask from the previous layer's predictions; a plain constant,
    // so no gradient flows through the masking decision.
    Tensor amask = (l == 0 || !layer_masks)
                       ? Tensor::zeros({n, P})
                       : layer_attention_mask(head_mask_logits(x, out.fmap).detached());
    Tensor q = scale(matmul(x, d.wq->use()), inv_sqrt_c);
    Tensor k = matmul(kin, d.wk->use());
    Tensor v = matmul(out.fmap.feat, d.wv->use());
    x = add(x, attention(q, k, v, amask));

    Tensor hs = d.self_ln(x);
    Tensor sa = attention(scale(matmul(hs, d.sq->use()), inv_sqrt_c), matmul(hs, d.sk->use()),
                          matmul(hs, d.sv->use()), self_mask);
    x = add(x, matmul(sa, d.so->use()));

    x = add(x, d.ffn(d.ffn_ln(x)));
  }

  out.queries = x;
  out.cls_logits = cls_head_(slice_rows(x, 0, n_cw_));
  if (n_ow_ > 0) out.obj_logits = obj_head_(slice_rows(x, n_cw_, n_ow_));
  out.mask_logits = head_mask_logits(x, out.fmap);
  out.boxes = sigmoid(box_head_(x));
  return out;
}

}  // namespace owvis
