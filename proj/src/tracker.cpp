#include "owvis/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "owvis/matching.hpp"
#include "owvis/ops.hpp"

namespace owvis {
namespace {

using nlohmann::json;

std::vector<uint8_t> threshold_region(const Tensor& mask_logits, int row) {
  const int p = mask_logits.dim(1);
  std::vector<uint8_t> region(p);
  const auto& v = mask_logits.values();
  for (int i = 0; i < p; ++i)
    region[i] = v[static_cast<size_t>(row) * p + i] > 0.0 ? 1 : 0;
  return region;
}

bool region_empty(const std::vector<uint8_t>& r) {
  return std::find(r.begin(), r.end(), uint8_t{1}) == r.end();
}

double region_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> query_row(const Tensor& queries, int row) {
  const int c = queries.dim(1);
  const auto& v = queries.values();
  return std::vector<double>(v.begin() + static_cast<size_t>(row) * c,
                             v.begin() + static_cast<size_t>(row + 1) * c);
}

}  // namespace

TrackerParams TrackerParams::from_config(const Config& cfg) {
  TrackerParams p;
  p.tau_cw = cfg.tau_cw;
  p.tau_ow = cfg.tau_ow;
  p.dup_iou = cfg.dup_iou;
  p.assoc_gate = cfg.assoc_gate;
  p.max_age = cfg.max_age;
  p.clip_len = cfg.clip_len;
  p.use_caption_mask = cfg.use_caption_mask;
  return p;
}

std::vector<KeptPrediction> filter_predictions(const ClipOutput& out,
                                               const TrackerParams& p) {
  std::vector<KeptPrediction> kept;
  static const std::vector<double> kNone;
  const auto& cls = out.n_cw > 0 ? out.cls_logits.values() : kNone;
  const int k1 = out.n_cw > 0 ? out.cls_logits.dim(1) : 0;
  for (int q = 0; q < out.n_cw; ++q) {
    // softmax over classes + "no object"; confidence = best real class
    double zmax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k1; ++j) zmax = std::max(zmax, cls[static_cast<size_t>(q) * k1 + j]);
    double denom = 0.0;
    for (int j = 0; j < k1; ++j)
      denom += std::exp(cls[static_cast<size_t>(q) * k1 + j] - zmax);
    int best = 0;
    double best_p = -1.0;
    for (int j = 0; j + 1 < k1; ++j) {
      double pj = std::exp(cls[static_cast<size_t>(q) * k1 + j] - zmax) / denom;
      if (pj > best_p) {
        best_p = pj;
        best = j;
      }
    }
    if (best_p < p.tau_cw) continue;
    KeptPrediction kp;
    kp.query_index = q;
    kp.open = false;
    kp.class_id = best;
    kp.confidence = best_p;
    kp.region = threshold_region(out.mask_logits, q);
    if (region_empty(kp.region)) continue;
    kp.query = query_row(out.queries, q);
    kept.push_back(std::move(kp));
  }
  const size_t n_closed_kept = kept.size();
  for (int j = 0; j < out.n_ow; ++j) {
    double z = out.obj_logits.values()[j];
    double obj = 1.0 / (1.0 + std::exp(-z));
    if (obj < p.tau_ow) continue;
    KeptPrediction kp;
    kp.query_index = out.n_cw + j;
    kp.open = true;
    kp.class_id = -1;
    kp.confidence = obj;
    kp.region = threshold_region(out.mask_logits, out.n_cw + j);
    if (region_empty(kp.region)) continue;
    bool duplicate = false;
    for (size_t c = 0; c < n_closed_kept && !duplicate; ++c)
      duplicate = region_iou(kp.region, kept[c].region) >= p.dup_iou;
    if (duplicate) continue;
    kp.query = query_row(out.queries, out.n_cw + j);
    kept.push_back(std::move(kp));
  }
  return kept;
}

std::vector<int> associate(TrackSet& set, const std::vector<KeptPrediction>& kept,
                           const TrackerParams& p) {
  const int max_age = p.resolved_max_age();
  std::vector<int> eligible;
  for (size_t t = 0; t < set.tracks.size(); ++t)
    if (set.tracks[t].age_since_seen <= max_age) eligible.push_back(static_cast<int>(t));

  const int rows = static_cast<int>(eligible.size());
  const int nk = static_cast<int>(kept.size());
  // columns: every detection, then one "stay unmatched" column per track
  constexpr double kBlocked = 1e9;
  const double kDummy = 1e6;  // worse than any admissible pair, better than blocked
  std::vector<int> pred_track(nk, -1);
  if (rows > 0) {
    std::vector<std::vector<double>> cost(rows, std::vector<double>(nk + rows, kBlocked));
    for (int r = 0; r < rows; ++r) {
      const Track& tr = set.tracks[eligible[r]];
      for (int c = 0; c < nk; ++c) {
        double d = 1.0 - cosine(tr.last_query, kept[c].query);
        if (d <= p.assoc_gate) cost[r][c] = d;
      }
      cost[r][nk + r] = kDummy;
    }
    std::vector<int> pick = match_min_cost(cost);
    for (int r = 0; r < rows; ++r)
      if (pick[r] < nk) pred_track[pick[r]] = eligible[r];
  }

  std::vector<char> matched_track(set.tracks.size(), 0);
  std::vector<int> result(nk, -1);
  for (int c = 0; c < nk; ++c) {
    if (pred_track[c] >= 0) {
      Track& tr = set.tracks[pred_track[c]];
      tr.last_query = kept[c].query;
      tr.age_since_seen = 0;
      matched_track[pred_track[c]] = 1;
      result[c] = pred_track[c];
    } else {
      Track tr;
      tr.track_id = set.next_id++;
      tr.open = kept[c].open;
      tr.class_id = kept[c].class_id;
      tr.last_query = kept[c].query;
      tr.age_since_seen = 0;
      result[c] = static_cast<int>(set.tracks.size());
      set.tracks.push_back(std::move(tr));
      matched_track.push_back(1);
    }
  }
  for (size_t t = 0; t < set.tracks.size(); ++t)
    if (!matched_track[t]) set.tracks[t].age_since_seen += p.clip_len;
  return result;
}

ClipOutput ModelBackend::forward(const Tensor& frames) const {
  return model_->transformer().forward_clip(frames);
}

std::vector<std::vector<std::string>> ModelBackend::captions(
    const ClipOutput& out,
    const std::vector<std::pair<int, std::vector<uint8_t>>>& objects) const {
  const CaptionHead& cap = model_->captions();
  CaptionHead::Context ctx = cap.make_context(out.fmap);
  std::vector<std::vector<std::string>> result;
  result.reserve(objects.size());
  for (const auto& [qi, region] : objects) {
    Tensor amask = CaptionHead::region_attention_mask(region, cap.memory_rows());
    Tensor memory = cap.object_memory(slice_rows(out.queries, qi, 1), ctx, amask);
    result.push_back(model_->vocab().decode(cap.decode_greedy(memory)));
  }
  return result;
}

TrackSet process_video(const ClipBackend& backend, const VideoSample& video,
                       const TrackerParams& p) {
  if (video.t <= 0) throw Error("empty-video", "cannot track an empty video");
  const int T = p.clip_len;
  TrackSet set;
  for (int start = 0; start < video.t; start += T) {
    const int real_end = std::min(start + T, video.t);
    Tensor frames = Model::frames_tensor(video, start, T);
    ClipOutput out = backend.forward(frames);
    std::vector<KeptPrediction> kept = filter_predictions(out, p);
    std::vector<int> track_of = associate(set, kept, p);

    std::vector<std::pair<int, std::vector<uint8_t>>> objects;
    objects.reserve(kept.size());
    const size_t cells = static_cast<size_t>(out.fmap.t) * out.fmap.h * out.fmap.w;
    for (const auto& kp : kept) {
      objects.emplace_back(kp.query_index, p.use_caption_mask
                                               ? kp.region
                                               : std::vector<uint8_t>(cells, 1));
    }
    std::vector<std::vector<std::string>> words = backend.captions(out, objects);

    const int fh = out.fmap.h, fw = out.fmap.w;
    for (size_t i = 0; i < kept.size(); ++i) {
      Track& tr = set.tracks[track_of[i]];
      for (int f = start; f < real_end; ++f) {
        const int ti = f - start;
        BinaryMask cell(fh, fw);
        bool any = false;
        for (int y = 0; y < fh; ++y)
          for (int x = 0; x < fw; ++x) {
            uint8_t v = kept[i].region[(static_cast<size_t>(ti) * fh + y) * fw + x];
            cell.set(y, x, v);
            any |= v != 0;
          }
        if (!any) continue;  // not visible in this frame
        TrackFrame tf;
        tf.frame = f;
        tf.mask = upsample_nearest(cell, 4);
        tf.box = tight_bbox(tf.mask);
        tf.confidence = kept[i].confidence;
        tr.frames.push_back(std::move(tf));
      }
      tr.captions.push_back({start, real_end, words[i]});
    }
  }
  return set;
}

std::vector<Track> gt_tracks(const VideoSample& video) {
  std::vector<Track> tracks;
  std::vector<int> id_of;  // parallel: GT track_id per output index
  for (int f = 0; f < video.t; ++f) {
    for (const FrameObject& o : video.gt[f]) {
      auto it = std::find(id_of.begin(), id_of.end(), o.track_id);
      Track* tr;
      if (it == id_of.end()) {
        tracks.emplace_back();
        tr = &tracks.back();
        tr->track_id = o.track_id;
        tr->open = false;
        tr->class_id = o.class_id;
        tr->caption_present = o.caption_present;
        id_of.push_back(o.track_id);
      } else {
        tr = &tracks[static_cast<size_t>(it - id_of.begin())];
      }
      if (o.mask.empty()) continue;  // fully occluded or out of frame
      TrackFrame tf;
      tf.frame = f;
      tf.mask = o.mask;
      tf.box = o.box;
      tf.confidence = 1.0;
      tr->frames.push_back(std::move(tf));
      // captions are constant per GT identity: one segment per visible run
      if (!tr->captions.empty() && tr->captions.back().end == f)
        tr->captions.back().end = f + 1;
      else
        tr->captions.push_back({f, f + 1, o.caption});
    }
  }
  return tracks;
}

void write_tracks(const std::string& path, const std::vector<Track>& tracks, int height,
                  int width) {
  json root;
  root["format_version"] = 1;
  root["height"] = height;
  root["width"] = width;
  json arr = json::array();
  for (const Track& tr : tracks) {
    json jt;
    jt["id"] = tr.track_id;
    jt["origin"] = tr.open ? "open" : "closed";
    jt["class"] = tr.class_id;
    jt["caption_present"] = tr.caption_present;
    json frames = json::array();
    for (const TrackFrame& tf : tr.frames) {
      json jf;
      jf["frame"] = tf.frame;
      jf["rle"] = rle_encode(tf.mask);
      jf["box"] = {tf.box.cx, tf.box.cy, tf.box.w, tf.box.h};
      jf["confidence"] = tf.confidence;
      frames.push_back(std::move(jf));
    }
    jt["frames"] = std::move(frames);
    json caps = json::array();
    for (const CaptionSegment& cs : tr.captions)
      caps.push_back({{"start", cs.start}, {"end", cs.end}, {"tokens", cs.tokens}});
    jt["captions"] = std::move(caps);
    arr.push_back(std::move(jt));
  }
  root["tracks"] = std::move(arr);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("missing-file", "cannot open for writing: " + path);
  out << root.dump(1);
  out << "\n";
}

TrackFile read_tracks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing-file", "no such track file: " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw Error("bad-json", std::string("track file: ") + e.what());
  }
  try {
    TrackFile tf;
    tf.height = root.at("height").get<int>();
    tf.width = root.at("width").get<int>();
    for (const json& jt : root.at("tracks")) {
      Track tr;
      tr.track_id = jt.at("id").get<int>();
      tr.open = jt.at("origin").get<std::string>() == "open";
      tr.class_id = jt.at("class").get<int>();
      tr.caption_present = jt.at("caption_present").get<bool>();
      for (const json& jf : jt.at("frames")) {
        TrackFrame f;
        f.frame = jf.at("frame").get<int>();
        f.mask = rle_decode(jf.at("rle").get<std::vector<int>>(), tf.height, tf.width);
        auto box = jf.at("box").get<std::vector<double>>();
        if (box.size() != 4) throw Error("bad-json", "box must have 4 entries");
        f.box = {box[0], box[1], box[2], box[3]};
        f.confidence = jf.at("confidence").get<double>();
        tr.frames.push_back(std::move(f));
      }
      for (const json& jc : jt.at("captions"))
        tr.captions.push_back({jc.at("start").get<int>(), jc.at("end").get<int>(),
                               jc.at("tokens").get<std::vector<std::string>>()});
      tf.tracks.push_back(std::move(tr));
    }
    return tf;
  } catch (const json::exception& e) {
    throw Error("bad-json", std::string("track file: ") + e.what());
  }
}

}  // namespace owvis
