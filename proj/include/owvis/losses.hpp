#pragma once

#include <cstdint>
#include <vector>

#include "owvis/caption_head.hpp"
#include "owvis/config.hpp"
#include "owvis/object_transformer.hpp"
#include "owvis/synthworld.hpp"
#include "owvis/vocab.hpp"

namespace owvis {

// Scalar reference implementations used by the matching cost (and as
// independent oracles for the differentiable versions).
// Mean-per-location binary cross-entropy on logits.
double bce_with_logits_mean(const std::vector<double>& logits, const std::vector<uint8_t>& target);
// Smoothed overlap loss on sigmoid(logits): 1 - (2*sum(p*g) + 1) / (sum(p) + sum(g) + 1).
double dice_smooth(const std::vector<double>& logits, const std::vector<uint8_t>& target);

// Differentiable counterparts for one prediction row (1, P).
Tensor mask_bce_loss(const Tensor& logit_row, const std::vector<uint8_t>& target);
Tensor mask_dice_loss(const Tensor& logit_row, const std::vector<uint8_t>& target);

// Matching cost between every ground-truth object (row) and prediction
// (column): l_cls * neg_log_pfg + l_bce * BCE + l_dice * Dice, with masks
// compared at feature resolution. neg_log_pfg[g][p] is the negative log
// score the prediction assigns to object g's class (or to objectness).
std::vector<std::vector<double>> pairwise_cost(
    const std::vector<std::vector<double>>& neg_log_pfg,
    const std::vector<std::vector<double>>& pred_mask_logits,
    const std::vector<std::vector<uint8_t>>& gt_regions, double l_cls, double l_bce,
    double l_dice);

// Ground truth for one clip at feature resolution.
struct ClipTargets {
  struct Obj {
    int track_id = 0;
    int class_id = 0;
    std::vector<uint8_t> region;  // t*fh*fw binary occupancy
    std::vector<int> caption_target;  // word ids + <eos>; empty when absent
    bool caption_present = true;
  };
  int t = 0, fh = 0, fw = 0;
  std::vector<Obj> objects;
};

// Downsamples the ground truth of frames [start, start + clip_len) to the
// stride-4 feature grid. Objects whose region vanishes at that scale are
// dropped. Captions longer than the budget are truncated to fit.
ClipTargets build_targets(const VideoSample& video, int start, int clip_len,
                          const Vocabulary& vocab, int max_caption_len);

struct LossOutputs {
  Tensor total, ow, cw, cont, cap;
  // matched prediction per GT object: column inside its block, -1 if the
  // matching was not run (no open queries / no objects)
  std::vector<int> cw_match, ow_match;
};

// The full training objective for one clip. cap_head may be null (caption
// term is then 0). Matching runs twice, independently for the closed and
// open blocks; unmatched open predictions contribute nothing, unmatched
// closed predictions are pushed to the "no object" class.
LossOutputs compute_losses(const ClipOutput& out, const CaptionHead* cap_head,
                           const ClipTargets& targets, const Config& cfg);

}  // namespace owvis
