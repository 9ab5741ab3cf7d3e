#include "owvis/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "owvis/matching.hpp"

namespace owvis {
namespace {

using nlohmann::json;

FrameMatch empty_match(size_t n_gt, size_t n_pred) {
  FrameMatch fm;
  fm.fn.resize(n_gt);
  std::iota(fm.fn.begin(), fm.fn.end(), 0);
  fm.fp.resize(n_pred);
  std::iota(fm.fp.begin(), fm.fp.end(), 0);
  return fm;
}

const CaptionSegment* covering_segment(const Track& t, int frame) {
  for (const CaptionSegment& s : t.captions)
    if (s.start <= frame && frame < s.end) return &s;
  return nullptr;
}

// All tracks of the corpus in one index space; frame keys (video, frame)
// make cross-video detections non-interacting.
struct PooledTrack {
  int video = 0;
  const Track* t = nullptr;
  int64_t n_dets = 0;
};

struct PooledFrame {
  std::vector<int> gt, pred;                    // pooled track indices
  std::vector<const TrackFrame*> gt_f, pred_f;  // parallel detections
  std::vector<std::vector<double>> iou;         // gt x pred
};

struct Pool {
  std::vector<PooledTrack> gt, pred;
  std::vector<PooledFrame> frames;
};

Pool build_pool(const std::vector<VideoEval>& videos) {
  Pool pool;
  std::map<std::pair<int, int>, size_t> frame_index;
  auto frame_of = [&](int video, int frame) -> PooledFrame& {
    auto [it, fresh] = frame_index.try_emplace({video, frame}, pool.frames.size());
    if (fresh) pool.frames.emplace_back();
    return pool.frames[it->second];
  };
  for (size_t v = 0; v < videos.size(); ++v) {
    for (const Track& t : videos[v].gt) {
      int idx = static_cast<int>(pool.gt.size());
      pool.gt.push_back({static_cast<int>(v), &t, static_cast<int64_t>(t.frames.size())});
      for (const TrackFrame& tf : t.frames) {
        PooledFrame& pf = frame_of(static_cast<int>(v), tf.frame);
        pf.gt.push_back(idx);
        pf.gt_f.push_back(&tf);
      }
    }
    for (const Track& t : videos[v].pred) {
      int idx = static_cast<int>(pool.pred.size());
      pool.pred.push_back({static_cast<int>(v), &t, static_cast<int64_t>(t.frames.size())});
      for (const TrackFrame& tf : t.frames) {
        PooledFrame& pf = frame_of(static_cast<int>(v), tf.frame);
        pf.pred.push_back(idx);
        pf.pred_f.push_back(&tf);
      }
    }
  }
  for (PooledFrame& pf : pool.frames) {
    pf.iou.assign(pf.gt.size(), std::vector<double>(pf.pred.size(), 0.0));
    for (size_t g = 0; g < pf.gt.size(); ++g)
      for (size_t p = 0; p < pf.pred.size(); ++p)
        pf.iou[g][p] = mask_iou(pf.gt_f[g]->mask, pf.pred_f[p]->mask);
  }
  return pool;
}

enum class Split { kAll, kCommon, kUncommon };

bool in_split(const PooledTrack& gt, Split split, const std::vector<int>& uncommon) {
  if (split == Split::kAll) return true;
  bool held = std::find(uncommon.begin(), uncommon.end(), gt.t->class_id) != uncommon.end();
  return split == Split::kUncommon ? held : !held;
}

struct TpPair {
  int g = 0, p = 0;      // pooled track indices
  size_t frame = 0;      // index into pool.frames
  int frame_no = 0;      // frame number inside the video
};

struct AlphaStats {
  int64_t tp = 0, fp = 0, fn = 0;
  double det_re = 0.0, det_a = 0.0, ass_a = 0.0;
  std::vector<TpPair> pairs;
};

AlphaStats stats_at(const Pool& pool, double alpha, Split split,
                    const std::vector<int>& uncommon) {
  AlphaStats st;
  std::map<std::pair<int, int>, int64_t> tpa;
  std::vector<int64_t> discounted(pool.pred.size(), 0);
  for (size_t fi = 0; fi < pool.frames.size(); ++fi) {
    const PooledFrame& pf = pool.frames[fi];
    FrameMatch fm = pf.gt.empty() ? empty_match(0, pf.pred.size())
                                  : match_frame_iou(pf.iou, alpha);
    for (auto [gi, pi] : fm.tp) {
      int g = pf.gt[gi], p = pf.pred[pi];
      if (in_split(pool.gt[g], split, uncommon)) {
        ++st.tp;
        ++tpa[{g, p}];
        st.pairs.push_back({g, p, fi, pf.gt_f[gi]->frame});
      } else {
        ++discounted[p];  // matched out-of-split ground truth: don't-care
      }
    }
    st.fp += static_cast<int64_t>(fm.fp.size());
    for (int gi : fm.fn)
      if (in_split(pool.gt[pf.gt[gi]], split, uncommon)) ++st.fn;
  }
  // Degenerate denominators: an empty-vs-empty comparison is perfect, an
  // empty side against a populated one scores zero. The corpus never hits
  // these; they keep oracle fixtures well-defined.
  bool vacuous = st.tp == 0 && st.fp == 0 && st.fn == 0;
  st.det_re = st.tp + st.fn > 0 ? static_cast<double>(st.tp) / (st.tp + st.fn)
                                : (vacuous ? 1.0 : 0.0);
  st.det_a = st.tp + st.fp + st.fn > 0
                 ? static_cast<double>(st.tp) / (st.tp + st.fp + st.fn)
                 : 1.0;
  if (st.pairs.empty()) {
    st.ass_a = vacuous ? 1.0 : 0.0;
  } else {
    double acc = 0.0;
    for (const TpPair& c : st.pairs) {
      int64_t a = tpa[{c.g, c.p}];
      int64_t gt_dets = pool.gt[c.g].n_dets;
      int64_t pred_dets = pool.pred[c.p].n_dets - discounted[c.p];
      acc += static_cast<double>(a) / static_cast<double>(gt_dets + pred_dets - a);
    }
    st.ass_a = acc / static_cast<double>(st.pairs.size());
  }
  return st;
}

double caption_accuracy(const Pool& pool, const AlphaStats& at05) {
  double acc = 0.0;
  int64_t scored = 0;
  for (const TpPair& c : at05.pairs) {
    const Track& gt = *pool.gt[c.g].t;
    if (!gt.caption_present) continue;  // unscored object
    const CaptionSegment* gs = covering_segment(gt, c.frame_no);
    const CaptionSegment* ps = covering_segment(*pool.pred[c.p].t, c.frame_no);
    static const std::vector<std::string> kEmpty;
    acc += caption_token_f1(ps ? ps->tokens : kEmpty, gs ? gs->tokens : kEmpty);
    ++scored;
  }
  // no scored pairs: captioning is not evaluated, treated as neutral
  return scored > 0 ? acc / static_cast<double>(scored) : 1.0;
}

// Spatio-temporal volume IoU between two tracks of the same video.
double volume_iou(const PooledTrack& a, const PooledTrack& b) {
  if (a.video != b.video) return 0.0;
  int64_t inter = 0, uni = 0;
  size_t i = 0, j = 0;
  const auto& fa = a.t->frames;
  const auto& fb = b.t->frames;
  while (i < fa.size() || j < fb.size()) {
    if (j >= fb.size() || (i < fa.size() && fa[i].frame < fb[j].frame)) {
      uni += fa[i].mask.area();
      ++i;
    } else if (i >= fa.size() || fb[j].frame < fa[i].frame) {
      uni += fb[j].mask.area();
      ++j;
    } else {
      const auto& ma = fa[i].mask;
      const auto& mb = fb[j].mask;
      if (ma.h != mb.h || ma.w != mb.w)
        throw Error("bad-shape", "track masks of one video must share extents");
      for (size_t k = 0; k < ma.data.size(); ++k) {
        inter += (ma.data[k] && mb.data[k]) ? 1 : 0;
        uni += (ma.data[k] || mb.data[k]) ? 1 : 0;
      }
      ++i;
      ++j;
    }
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double track_confidence(const Track& t) {
  if (t.frames.empty()) return 0.0;
  double s = 0.0;
  for (const TrackFrame& f : t.frames) s += f.confidence;
  return s / static_cast<double>(t.frames.size());
}

double average_precision(const Pool& pool, double thr, Split split,
                         const std::vector<int>& uncommon) {
  std::vector<int> order(pool.pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> conf(pool.pred.size());
  for (size_t p = 0; p < pool.pred.size(); ++p) conf[p] = track_confidence(*pool.pred[p].t);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return conf[a] > conf[b]; });

  int64_t n_gt = 0;
  for (const PooledTrack& g : pool.gt)
    if (in_split(g, split, uncommon)) ++n_gt;

  std::vector<char> taken(pool.gt.size(), 0);
  std::vector<char> outcome;  // 1 = TP, 0 = FP; discounted preds omitted
  outcome.reserve(order.size());
  for (int p : order) {
    int best = -1;
    double best_iou = 0.0;
    bool dont_care = false;
    for (size_t g = 0; g < pool.gt.size(); ++g) {
      double v = volume_iou(pool.gt[g], pool.pred[p]);
      if (v < thr) continue;
      if (!in_split(pool.gt[g], split, uncommon)) {
        dont_care = true;
        continue;
      }
      if (!taken[g] && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[best] = 1;
      outcome.push_back(1);
    } else if (!dont_care) {
      outcome.push_back(0);
    }
  }
  if (n_gt == 0) return outcome.empty() ? 1.0 : 0.0;

  // all-points interpolated area under the precision-recall curve
  std::vector<double> recall, precision;
  int64_t tp = 0;
  for (size_t i = 0; i < outcome.size(); ++i) {
    tp += outcome[i];
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double ap = 0.0, prev_r = 0.0;
  for (size_t i = 0; i < recall.size(); ++i) {
    if (!outcome[i]) continue;
    // interpolated precision: the best precision at this recall or beyond
    double p_here = *std::max_element(precision.begin() + static_cast<long>(i),
                                      precision.end());
    ap += (recall[i] - prev_r) * p_here;
    prev_r = recall[i];
  }
  return ap;
}

SplitReport report_split(const Pool& pool, Split split, const std::vector<int>& uncommon,
                         const std::vector<double>& alphas) {
  SplitReport r;
  double owta_sum = 0.0;
  AlphaStats at05;
  for (double a : alphas) {
    AlphaStats st = stats_at(pool, a, split, uncommon);
    double owta = std::sqrt(st.det_re * st.ass_a);
    owta_sum += owta;
    if (std::abs(a - 0.5) < 1e-12) {
      at05 = std::move(st);
      r.owta_at_05 = owta;
    }
  }
  r.owta = owta_sum / static_cast<double>(alphas.size());
  r.det_re = at05.det_re;
  r.det_a = at05.det_a;
  r.ass_a = at05.ass_a;
  r.tp = at05.tp;
  r.fp = at05.fp;
  r.fn = at05.fn;
  r.cap_a = caption_accuracy(pool, at05);
  r.chota = std::cbrt(r.det_a * r.ass_a * r.cap_a);
  r.ap50 = average_precision(pool, 0.5, split, uncommon);
  r.ap75 = average_precision(pool, 0.75, split, uncommon);
  return r;
}

json split_json(const SplitReport& r) {
  return {{"OWTA", r.owta},     {"OWTA@0.5", r.owta_at_05},
          {"DetRe", r.det_re},  {"DetA", r.det_a},
          {"AssA", r.ass_a},    {"CapA", r.cap_a},
          {"CHOTA", r.chota},   {"AP50", r.ap50},
          {"AP75", r.ap75},     {"TP", r.tp},
          {"FP", r.fp},         {"FN", r.fn}};
}

}  // namespace

FrameMatch match_frame_iou(const std::vector<std::vector<double>>& iou, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error("bad-config-value", "matching threshold must lie in (0, 1)");
  const size_t n_gt = iou.size();
  const size_t n_pred = n_gt > 0 ? iou[0].size() : 0;
  if (n_gt == 0 || n_pred == 0) return empty_match(n_gt, n_pred);

  constexpr double kBlocked = 1e9;
  std::vector<std::vector<double>> cost(n_gt, std::vector<double>(n_pred + n_gt, kBlocked));
  for (size_t g = 0; g < n_gt; ++g) {
    for (size_t p = 0; p < n_pred; ++p)
      cost[g][p] = iou[g][p] >= alpha ? -iou[g][p] : 1.0;
    cost[g][n_pred + g] = 0.0;  // the "stay unmatched" option
  }
  std::vector<int> pick = match_min_cost(cost);
  FrameMatch fm;
  std::vector<char> pred_used(n_pred, 0);
  for (size_t g = 0; g < n_gt; ++g) {
    if (pick[g] < static_cast<int>(n_pred)) {
      fm.tp.emplace_back(static_cast<int>(g), pick[g]);
      pred_used[pick[g]] = 1;
    } else {
      fm.fn.push_back(static_cast<int>(g));
    }
  }
  for (size_t p = 0; p < n_pred; ++p)
    if (!pred_used[p]) fm.fp.push_back(static_cast<int>(p));
  return fm;
}

FrameMatch match_frame(const std::vector<BinaryMask>& gt,
                       const std::vector<BinaryMask>& pred, double alpha) {
  std::vector<std::vector<double>> iou(gt.size(), std::vector<double>(pred.size(), 0.0));
  for (size_t g = 0; g < gt.size(); ++g)
    for (size_t p = 0; p < pred.size(); ++p) iou[g][p] = mask_iou(gt[g], pred[p]);
  if (gt.empty()) return empty_match(gt.size(), pred.size());
  return match_frame_iou(iou, alpha);
}

double caption_token_f1(const std::vector<std::string>& pred,
                        const std::vector<std::string>& gt) {
  if (pred.empty() && gt.empty()) return 1.0;
  if (pred.empty() || gt.empty()) return 0.0;
  std::map<std::string, int64_t> want;
  for (const std::string& w : gt) ++want[w];
  int64_t overlap = 0;
  for (const std::string& w : pred) {
    auto it = want.find(w);
    if (it != want.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
  double r = static_cast<double>(overlap) / static_cast<double>(gt.size());
  return 2.0 * p * r / (p + r);
}

EvalReport evaluate(const std::vector<VideoEval>& videos,
                    const std::vector<int>& uncommon_classes) {
  Pool pool = build_pool(videos);
  EvalReport report;
  for (int i = 1; i <= 19; ++i) report.alphas.push_back(0.05 * i);
  report.all = report_split(pool, Split::kAll, uncommon_classes, report.alphas);
  report.common = report_split(pool, Split::kCommon, uncommon_classes, report.alphas);
  report.uncommon = report_split(pool, Split::kUncommon, uncommon_classes, report.alphas);
  return report;
}

void write_report(const std::string& path, const EvalReport& report) {
  json root;
  root["alphas"] = report.alphas;
  root["splits"] = {{"all", split_json(report.all)},
                    {"common", split_json(report.common)},
                    {"uncommon", split_json(report.uncommon)}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("missing-file", "cannot open for writing: " + path);
  out << root.dump(1) << "\n";
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("missing-file", "cannot open for writing: " + path);
  out << "split,OWTA,OWTA@0.5,DetRe,DetA,AssA,CapA,CHOTA,AP50,AP75,TP,FP,FN\n";
  auto row = [&](const char* name, const SplitReport& r) {
    out.precision(10);
    out << name << ',' << r.owta << ',' << r.owta_at_05 << ',' << r.det_re << ',' << r.det_a
        << ',' << r.ass_a << ',' << r.cap_a << ',' << r.chota << ',' << r.ap50 << ','
        << r.ap75 << ',' << r.tp << ',' << r.fp << ',' << r.fn << "\n";
  };
  row("all", report.all);
  row("common", report.common);
  row("uncommon", report.uncommon);
}

}  // namespace owvis
