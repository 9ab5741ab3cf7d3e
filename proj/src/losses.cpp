#include "owvis/losses.hpp"

#include <algorithm>
#include <cmath>

#include "owvis/mask.hpp"
#include "owvis/matching.hpp"

namespace owvis {
namespace {

double softplus_stable(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid_stable(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

Tensor const_row(const std::vector<uint8_t>& target) {
  std::vector<double> v(target.size());
  for (size_t i = 0; i < target.size(); ++i) v[i] = target[i] ? 1.0 : 0.0;
  return Tensor({1, static_cast<int>(target.size())}, std::move(v));
}

}  // namespace

double bce_with_logits_mean(const std::vector<double>& logits,
                            const std::vector<uint8_t>& target) {
  if (logits.size() != target.size()) throw Error("shape-mismatch", "BCE extents differ");
  if (logits.empty()) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < logits.size(); ++i)
    s += softplus_stable(logits[i]) - logits[i] * (target[i] ? 1.0 : 0.0);
  return s / static_cast<double>(logits.size());
}

double dice_smooth(const std::vector<double>& logits, const std::vector<uint8_t>& target) {
  if (logits.size() != target.size()) throw Error("shape-mismatch", "Dice extents differ");
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    double p = sigmoid_stable(logits[i]);
    psum += p;
    if (target[i]) {
      inter += p;
      gsum += 1.0;
    }
  }
  return 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0);
}

Tensor mask_bce_loss(const Tensor& logit_row, const std::vector<uint8_t>& target) {
  if (logit_row.size() != static_cast<int64_t>(target.size()))
    throw Error("shape-mismatch", "BCE extents differ");
  Tensor t = const_row(target);
  Tensor z = reshape(logit_row, {1, static_cast<int>(target.size())});
  return mean_all(sub(softplus(z), mul(z, t)));
}

Tensor mask_dice_loss(const Tensor& logit_row, const std::vector<uint8_t>& target) {
  if (logit_row.size() != static_cast<int64_t>(target.size()))
    throw Error("shape-mismatch", "Dice extents differ");
  double gsum = 0.0;
  for (uint8_t v : target) gsum += v ? 1.0 : 0.0;
  Tensor t = const_row(target);
  Tensor p = sigmoid(reshape(logit_row, {1, static_cast<int>(target.size())}));
  Tensor num = add_scalar(scale(sum_all(mul(p, t)), 2.0), 1.0);
  Tensor den = add_scalar(sum_all(p), gsum + 1.0);
  return add_scalar(scale(div(num, den), -1.0), 1.0);
}

std::vector<std::vector<double>> pairwise_cost(
    const std::vector<std::vector<double>>& neg_log_pfg,
    const std::vector<std::vector<double>>& pred_mask_logits,
    const std::vector<std::vector<uint8_t>>& gt_regions, double l_cls, double l_bce,
    double l_dice) {
  const size_t g_count = gt_regions.size(), p_count = pred_mask_logits.size();
  if (neg_log_pfg.size() != g_count) throw Error("shape-mismatch", "score rows != GT count");
  std::vector<std::vector<double>> cost(g_count, std::vector<double>(p_count, 0.0));
  for (size_t g = 0; g < g_count; ++g) {
    if (neg_log_pfg[g].size() != p_count)
      throw Error("shape-mismatch", "score columns != prediction count");
    for (size_t p = 0; p < p_count; ++p) {
      cost[g][p] = l_cls * neg_log_pfg[g][p] +
                   l_bce * bce_with_logits_mean(pred_mask_logits[p], gt_regions[g]) +
                   l_dice * dice_smooth(pred_mask_logits[p], gt_regions[g]);
    }
  }
  return cost;
}

ClipTargets build_targets(const VideoSample& video, int start, int clip_len,
                          const Vocabulary& vocab, int max_caption_len) {
  if (start < 0 || start + clip_len > video.t)
    throw Error("bad-shape", "clip range outside the video");
  if (video.h % 4 != 0 || video.w % 4 != 0)
    throw Error("bad-shape", "frame extents must be divisible by 4");
  ClipTargets tg;
  tg.t = clip_len;
  tg.fh = video.h / 4;
  tg.fw = video.w / 4;
  const int cell = tg.fh * tg.fw;

  std::vector<int> track_order;
  for (int dt = 0; dt < clip_len; ++dt)
    for (const FrameObject& o : video.gt[start + dt])
      if (std::find(track_order.begin(), track_order.end(), o.track_id) == track_order.end())
        track_order.push_back(o.track_id);
  std::sort(track_order.begin(), track_order.end());

  for (int id : track_order) {
    ClipTargets::Obj obj;
    obj.track_id = id;
    obj.region.assign(static_cast<size_t>(clip_len) * cell, 0);
    bool any = false;
    for (int dt = 0; dt < clip_len; ++dt) {
      for (const FrameObject& o : video.gt[start + dt]) {
        if (o.track_id != id) continue;
        obj.class_id = o.class_id;
        obj.caption_present = o.caption_present;
        BinaryMask down = downsample_majority(o.mask, 4);
        for (int i = 0; i < cell; ++i)
          if (down.data[i]) {
            obj.region[static_cast<size_t>(dt) * cell + i] = 1;
            any = true;
          }
        if (obj.caption_target.empty() && !o.caption.empty()) {
          std::vector<std::string> words = o.caption;
          if (static_cast<int>(words.size()) > max_caption_len - 1)
            words.resize(max_caption_len - 1);
          obj.caption_target = vocab.encode(words);
          obj.caption_target.push_back(Vocabulary::kEos);
        }
      }
    }
    if (any) tg.objects.push_back(std::move(obj));
  }
  return tg;
}

LossOutputs compute_losses(const ClipOutput& out, const CaptionHead* cap_head,
                           const ClipTargets& targets, const Config& cfg) {
  if (targets.t != out.fmap.t || targets.fh != out.fmap.h || targets.fw != out.fmap.w)
    throw Error("shape-mismatch", "targets and features disagree on clip extents");
  const int n_cw = out.n_cw, n_ow = out.n_ow;
  const int P = out.fmap.t * out.fmap.h * out.fmap.w;
  const int G = static_cast<int>(targets.objects.size());
  const int K1 = out.cls_logits.dim(1);  // classes + 1
  if (G > n_cw) throw Error("bad-shape", "more objects than closed-world queries");

  LossOutputs res;
  res.cw_match.assign(G, -1);
  res.ow_match.assign(G, -1);

  const std::vector<double>& mlv = out.mask_logits.values();
  auto mask_row_vals = [&](int q) {
    return std::vector<double>(mlv.begin() + static_cast<int64_t>(q) * P,
                               mlv.begin() + static_cast<int64_t>(q + 1) * P);
  };
  std::vector<std::vector<uint8_t>> regions;
  regions.reserve(G);
  for (const auto& o : targets.objects) regions.push_back(o.region);

  // --- closed-world matching on detached values
  if (G > 0) {
    const std::vector<double>& clsv = out.cls_logits.values();
    std::vector<double> lse(n_cw);
    for (int q = 0; q < n_cw; ++q) {
      double mx = clsv[static_cast<size_t>(q) * K1];
      for (int c = 1; c < K1; ++c) mx = std::max(mx, clsv[static_cast<size_t>(q) * K1 + c]);
      double s = 0.0;
      for (int c = 0; c < K1; ++c) s += std::exp(clsv[static_cast<size_t>(q) * K1 + c] - mx);
      lse[q] = mx + std::log(s);
    }
    std::vector<std::vector<double>> nlp(G, std::vector<double>(n_cw));
    std::vector<std::vector<double>> pmask(n_cw);
    for (int q = 0; q < n_cw; ++q) pmask[q] = mask_row_vals(q);
    for (int g = 0; g < G; ++g)
      for (int q = 0; q < n_cw; ++q)
        nlp[g][q] = lse[q] - clsv[static_cast<size_t>(q) * K1 + targets.objects[g].class_id];
    res.cw_match = match_min_cost(
        pairwise_cost(nlp, pmask, regions, cfg.lambda_cls, cfg.lambda_bce, cfg.lambda_dice));
  }

  // --- closed-world loss: every query is classified (unmatched ones to the
  // "no object" column); matched queries also carry the mask terms.
  std::vector<int> target_class(n_cw, K1 - 1);
  for (int g = 0; g < G; ++g) target_class[res.cw_match[g]] = targets.objects[g].class_id;
  Tensor cw = scale(sum_all(select_lastdim(log_softmax_lastdim(out.cls_logits), target_class)),
                    -1.0);
  for (int g = 0; g < G; ++g) {
    Tensor row = slice_rows(out.mask_logits, res.cw_match[g], 1);
    cw = add(cw, add(mask_bce_loss(row, targets.objects[g].region),
                     mask_dice_loss(row, targets.objects[g].region)));
  }

  // --- open-world matching and loss: only matched proposals are supervised
  // (objectness toward 1 plus the mask terms); unmatched ones are left
  // entirely alone.
  Tensor ow = Tensor::scalar(0.0);
  if (n_ow > 0 && G > 0) {
    if (G > n_ow) throw Error("bad-shape", "more objects than open-world queries");
    const std::vector<double>& objv = out.obj_logits.values();
    std::vector<std::vector<double>> nlp(G, std::vector<double>(n_ow));
    std::vector<std::vector<double>> pmask(n_ow);
    for (int j = 0; j < n_ow; ++j) pmask[j] = mask_row_vals(n_cw + j);
    for (int g = 0; g < G; ++g)
      for (int j = 0; j < n_ow; ++j) nlp[g][j] = softplus_stable(-objv[j]);
    res.ow_match = match_min_cost(
        pairwise_cost(nlp, pmask, regions, cfg.lambda_cls, cfg.lambda_bce, cfg.lambda_dice));
    for (int g = 0; g < G; ++g) {
      int j = res.ow_match[g];
      ow = add(ow, mean_all(softplus(scale(slice_rows(out.obj_logits, j, 1), -1.0))));
      Tensor row = slice_rows(out.mask_logits, n_cw + j, 1);
      ow = add(ow, add(mask_bce_loss(row, targets.objects[g].region),
                       mask_dice_loss(row, targets.objects[g].region)));
    }
  }

  // --- query separation term
  Tensor cont = Tensor::scalar(0.0);
  if (cfg.use_contrastive && cfg.lambda_cont != 0.0) {
    std::vector<int> fg;
    if (cfg.cont_scope == "all") {
      for (int q = 0; q < out.n(); ++q) fg.push_back(q);
    } else {
      for (int g = 0; g < G; ++g) {
        fg.push_back(res.cw_match[g]);
        if (res.ow_match[g] >= 0) fg.push_back(n_cw + res.ow_match[g]);
      }
      std::sort(fg.begin(), fg.end());
    }
    if (fg.size() >= 2) {
      Tensor q = cfg.cont_normalize ? l2_normalize_rows(out.queries) : out.queries;
      cont = neg_mean_pairwise_l1(q, fg);
    }
  }

  // --- caption term: token-mean teacher-forced cross-entropy over the
  // matched queries of caption-carrying objects; PAD positions excluded.
  Tensor cap = Tensor::scalar(0.0);
  if (cap_head != nullptr && cfg.lambda_cap != 0.0) {
    CaptionHead::Context ctx = cap_head->make_context(out.fmap);
    Tensor tok_sum = Tensor::scalar(0.0);
    int64_t tok_count = 0;
    for (int g = 0; g < G; ++g) {
      const auto& obj = targets.objects[g];
      if (!obj.caption_present || obj.caption_target.empty()) continue;
      std::vector<int> queries{res.cw_match[g]};
      if (res.ow_match[g] >= 0) queries.push_back(n_cw + res.ow_match[g]);
      const int len = static_cast<int>(obj.caption_target.size());
      std::vector<int> inputs(len);
      inputs[0] = Vocabulary::kBos;
      for (int i = 1; i < len; ++i) inputs[i] = obj.caption_target[i - 1];
      int64_t kept = 0;
      for (int i = 0; i < len; ++i)
        if (obj.caption_target[i] != Vocabulary::kPad) ++kept;
      if (kept == 0) continue;
      for (int q : queries) {
        std::vector<uint8_t> region;
        if (cfg.use_caption_mask) {
          region.resize(P);
          for (int i = 0; i < P; ++i)
            region[i] = mlv[static_cast<size_t>(q) * P + i] > 0.0 ? 1 : 0;
        } else {
          region.assign(P, 1);  // unrestricted attention
        }
        Tensor amask = CaptionHead::region_attention_mask(region, cap_head->memory_rows());
        Tensor mem =
            cap_head->object_memory(slice_rows(out.queries, q, 1), ctx, amask);
        Tensor logits = cap_head->caption_logits(mem, inputs);
        Tensor nll = scale(select_lastdim(log_softmax_lastdim(logits), obj.caption_target), -1.0);
        std::vector<double> keep(len, 1.0);
        for (int i = 0; i < len; ++i)
          if (obj.caption_target[i] == Vocabulary::kPad) keep[i] = 0.0;
        tok_sum = add(tok_sum, sum_all(mul(nll, Tensor({len}, std::move(keep)))));
        tok_count += kept;
      }
    }
    if (tok_count > 0) cap = scale(tok_sum, 1.0 / static_cast<double>(tok_count));
  }

  res.ow = ow;
  res.cw = cw;
  res.cont = cont;
  res.cap = cap;
  res.total = add(add(scale(ow, cfg.lambda_ow), scale(cw, cfg.lambda_cw)),
                  add(scale(cont, cfg.lambda_cont), scale(cap, cfg.lambda_cap)));
  return res;
}

}  // namespace owvis
