#pragma once

#include <string>
#include <utility>
#include <vector>

#include "owvis/tracker.hpp"

namespace owvis {

// Per-frame detection matching: Hungarian maximization of total mask IoU,
// admitting only pairs with IoU >= alpha; ties broken as in the assignment
// module (lexicographically smallest ground-truth -> prediction columns).
struct FrameMatch {
  std::vector<std::pair<int, int>> tp;  // (gt index, pred index)
  std::vector<int> fp;                  // unmatched prediction indices
  std::vector<int> fn;                  // unmatched ground-truth indices
};
FrameMatch match_frame(const std::vector<BinaryMask>& gt,
                       const std::vector<BinaryMask>& pred, double alpha);
// Same, on a precomputed iou[g][p] matrix.
FrameMatch match_frame_iou(const std::vector<std::vector<double>>& iou, double alpha);

// Multiset token overlap F1. Both empty -> 1; one empty -> 0.
double caption_token_f1(const std::vector<std::string>& pred,
                        const std::vector<std::string>& gt);

// Metrics for one ground-truth class selection ("split").
struct SplitReport {
  double owta = 0.0;        // mean over the alpha grid of sqrt(DetRe * AssA)
  double owta_at_05 = 0.0;  // the alpha = 0.5 value
  double det_re = 0.0;      // TP / (TP + FN) at alpha = 0.5
  double det_a = 0.0;       // TP / (TP + FP + FN) at alpha = 0.5
  double ass_a = 0.0;       // association accuracy at alpha = 0.5
  double cap_a = 0.0;       // mean caption F1 over scored TP pairs
  double chota = 0.0;       // cbrt(DetA * AssA * CapA)
  double ap50 = 0.0, ap75 = 0.0;  // track AP at volume IoU 0.5 / 0.75
  int64_t tp = 0, fp = 0, fn = 0;  // detection counts at alpha = 0.5
};

struct EvalReport {
  std::vector<double> alphas;  // the OWTA averaging grid
  SplitReport all, common, uncommon;
};

// One video's ground truth and predictions.
struct VideoEval {
  std::vector<Track> gt;
  std::vector<Track> pred;
};

// Evaluates the corpus, pooled over videos. Matching is class-agnostic;
// the common/uncommon splits select ground-truth tracks by class id
// (uncommon = held-out classes). Predictions overlapping only out-of-split
// ground truth are discounted rather than counted as false positives.
EvalReport evaluate(const std::vector<VideoEval>& videos,
                    const std::vector<int>& uncommon_classes);

// report.json with the full schema, plus a flat one-row-per-split CSV.
void write_report(const std::string& path, const EvalReport& report);
void write_report_csv(const std::string& path, const EvalReport& report);

}  // namespace owvis
