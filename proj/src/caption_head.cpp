#include "owvis/caption_head.hpp"

#include <cmath>
#include <limits>

#include "owvis/vocab.hpp"

namespace owvis {
namespace {

void freeze(std::initializer_list<ParamPtr> ps) {
  for (const ParamPtr& p : ps) p->set_frozen(true);
}

Tensor causal_mask(int len) {
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(static_cast<size_t>(len) * len, 0.0);
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j) m[static_cast<size_t>(i) * len + j] = ninf;
  return Tensor({len, len}, std::move(m));
}

}  // namespace

CaptionHead::CaptionHead(ParamSet& ps, Rng& rng, const Config& cfg, int vocab_size)
    : dim_(cfg.model_dim), ntext_(cfg.n_text), vocab_(vocab_size),
      max_len_(cfg.max_caption_len) {
  const int C = dim_;
  const double s = 1.0 / std::sqrt(static_cast<double>(C));
  text_ = make_param(ps, rng, "cap.text", {ntext_, C}, s);
  refine_.resize(cfg.o2t_layers);
  for (int l = 0; l < cfg.o2t_layers; ++l) {
    std::string base = "cap.refine" + std::to_string(l);
    RefineLayer& r = refine_[l];
    r.wq = make_param(ps, rng, base + ".cross.wq", {C, C}, s);
    r.wk = make_param(ps, rng, base + ".cross.wk", {C, C}, s);
    r.wv = make_param(ps, rng, base + ".cross.wv", {C, C}, s);
    r.self_ln = LayerNormLayer(ps, base + ".self.ln", C);
    r.sq = make_param(ps, rng, base + ".self.wq", {C, C}, s);
    r.sk = make_param(ps, rng, base + ".self.wk", {C, C}, s);
    r.sv = make_param(ps, rng, base + ".self.wv", {C, C}, s);
    r.so = make_const_param(ps, base + ".self.wo", {C, C}, 0.0);
    r.ffn_ln = LayerNormLayer(ps, base + ".ffn.ln", C);
    r.ffn = Mlp2(ps, rng, base + ".ffn", C, 4 * C, C, /*out_gain=*/0.0);
  }

  tok_ = make_param(ps, rng, "cap.dec.tok", {vocab_, C}, s);
  pos_ = make_param(ps, rng, "cap.dec.pos", {max_len_, C}, s);
  ln1_ = LayerNormLayer(ps, "cap.dec.ln1", C);
  dsq_ = make_param(ps, rng, "cap.dec.self.wq", {C, C}, s);
  dsk_ = make_param(ps, rng, "cap.dec.self.wk", {C, C}, s);
  dsv_ = make_param(ps, rng, "cap.dec.self.wv", {C, C}, s);
  dso_ = make_param(ps, rng, "cap.dec.self.wo", {C, C}, s);
  ln2_ = LayerNormLayer(ps, "cap.dec.ln2", C);
  dcq_ = make_param(ps, rng, "cap.dec.cross.wq", {C, C}, s);
  dck_ = make_param(ps, rng, "cap.dec.cross.wk", {C, C}, s);
  dcv_ = make_param(ps, rng, "cap.dec.cross.wv", {C, C}, s);
  dco_ = make_param(ps, rng, "cap.dec.cross.wo", {C, C}, s);
  ln3_ = LayerNormLayer(ps, "cap.dec.ln3", C);
  dffn_ = Mlp2(ps, rng, "cap.dec.ffn", C, 4 * C, C);
  out_ = LinearLayer(ps, rng, "cap.dec.out", C, vocab_);

  if (cfg.decoder_mode == "frozen-random") {
    freeze({tok_, pos_, ln1_.gamma, ln1_.beta, dsq_, dsk_, dsv_, dso_, ln2_.gamma, ln2_.beta,
            dcq_, dck_, dcv_, dco_, ln3_.gamma, ln3_.beta, dffn_.l1.w, dffn_.l1.b, dffn_.l2.w,
            dffn_.l2.b, out_.w, out_.b});
  } else if (cfg.decoder_mode != "trainable") {
    throw Error("bad-config-value", "decoder_mode must be trainable or frozen-random");
  }
}

CaptionHead::Context CaptionHead::make_context(const FeatureMap& fmap) const {
  Context ctx;
  ctx.p = fmap.t * fmap.h * fmap.w;
  Tensor kin = add(fmap.feat, fmap.pos);
  for (const RefineLayer& r : refine_) {
    ctx.k.push_back(matmul(kin, r.wk->use()));
    ctx.v.push_back(matmul(fmap.feat, r.wv->use()));
  }
  return ctx;
}

Tensor CaptionHead::region_attention_mask(const std::vector<uint8_t>& region, int rows) {
  const int p = static_cast<int>(region.size());
  const double ninf = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (uint8_t v : region) any |= (v != 0);
  std::vector<double> m(static_cast<size_t>(rows) * p, 0.0);
  if (any) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < p; ++j)
        if (!region[j]) m[static_cast<size_t>(i) * p + j] = ninf;
  }
  return Tensor({rows, p}, std::move(m));
}

Tensor CaptionHead::object_memory(const Tensor& query_row, const Context& ctx,
                                  const Tensor& add_mask) const {
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(dim_));
  Tensor x = concat_rows(query_row, text_->use());  // (1 + n_text, C)
  const int rows = ntext_ + 1;
  Tensor self_mask = Tensor::zeros({rows, rows});
  for (size_t l = 0; l < refine_.size(); ++l) {
    const RefineLayer& r = refine_[l];
    Tensor q = scale(matmul(x, r.wq->use()), inv_sqrt_c);
    x = add(x, attention(q, ctx.k[l], ctx.v[l], add_mask));
    Tensor hs = r.self_ln(x);
    Tensor sa = attention(scale(matmul(hs, r.sq->use()), inv_sqrt_c), matmul(hs, r.sk->use()),
                          matmul(hs, r.sv->use()), self_mask);
    x = add(x, matmul(sa, r.so->use()));
    x = add(x, r.ffn(r.ffn_ln(x)));
  }
  return x;
}

Tensor CaptionHead::caption_logits(const Tensor& memory, const std::vector<int>& input_ids) const {
  const int len = static_cast<int>(input_ids.size());
  if (len < 1 || len > max_len_)
    throw Error("bad-shape", "caption sequence length outside the decode budget");
  for (int id : input_ids)
    if (id < 0 || id >= vocab_) throw Error("unknown-token", "token id outside the vocabulary");
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(dim_));

  Tensor e = add(embedding_rows(tok_->use(), input_ids), slice_rows(pos_->use(), 0, len));
  Tensor h1 = ln1_(e);
  Tensor sa = attention(scale(matmul(h1, dsq_->use()), inv_sqrt_c), matmul(h1, dsk_->use()),
                        matmul(h1, dsv_->use()), causal_mask(len));
  Tensor a = add(e, matmul(sa, dso_->use()));
  Tensor h2 = ln2_(a);
  Tensor ca = attention(scale(matmul(h2, dcq_->use()), inv_sqrt_c), matmul(memory, dck_->use()),
                        matmul(memory, dcv_->use()), Tensor::zeros({len, memory.dim(0)}));
  Tensor b = add(a, matmul(ca, dco_->use()));
  Tensor f = add(b, dffn_(ln3_(b)));
  return out_(f);
}

std::vector<int> CaptionHead::decode_greedy(const Tensor& memory) const {
  std::vector<int> ids{Vocabulary::kBos};
  std::vector<int> emitted;
  while (static_cast<int>(ids.size()) <= max_len_ - 1) {
    Tensor logits = caption_logits(memory, ids);
    const std::vector<double>& v = logits.values();
    const int last = logits.dim(0) - 1;
    int best = 0;
    double best_val = v[static_cast<size_t>(last) * vocab_];
    for (int j = 1; j < vocab_; ++j) {
      double val = v[static_cast<size_t>(last) * vocab_ + j];
      if (val > best_val) {
        best_val = val;
        best = j;
      }
    }
    emitted.push_back(best);
    ids.push_back(best);
    if (best == Vocabulary::kEos) break;
  }
  return emitted;
}

}  // namespace owvis
