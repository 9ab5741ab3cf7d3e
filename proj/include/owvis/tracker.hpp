#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "owvis/config.hpp"
#include "owvis/mask.hpp"
#include "owvis/model.hpp"

namespace owvis {

// One object detection carried through a video: per-frame masks linked
// across clips by query similarity, with one caption per clip segment.
struct TrackFrame {
  int frame = 0;
  BinaryMask mask;  // full resolution
  NormBox box;
  double confidence = 0.0;
};

struct CaptionSegment {
  int start = 0, end = 0;  // frame range [start, end)
  std::vector<std::string> tokens;
};

struct Track {
  int track_id = 0;
  bool open = false;   // proposed by an open-world query
  int class_id = -1;   // -1 = unknown (open-world detections)
  bool caption_present = true;
  std::vector<TrackFrame> frames;       // strictly increasing frame indices
  std::vector<CaptionSegment> captions;  // non-overlapping ranges
  // online association state
  std::vector<double> last_query;
  int age_since_seen = 0;  // frames since the last detection
};

struct TrackSet {
  std::vector<Track> tracks;
  int next_id = 0;
};

// Inference-time behavior knobs, resolved from the run Config.
struct TrackerParams {
  double tau_cw = 0.5;     // min closed-world class confidence
  double tau_ow = 0.5;     // min open-world objectness
  double dup_iou = 0.7;    // open proposals overlapping a kept closed
                           // detection at least this much are dropped
  double assoc_gate = 0.5; // max association cost (1 - cosine similarity)
  int max_age = 0;         // revival window in frames; 0 = 2 * clip_len
  int clip_len = 2;
  bool use_caption_mask = true;

  static TrackerParams from_config(const Config& cfg);
  int resolved_max_age() const { return max_age > 0 ? max_age : 2 * clip_len; }
};

// One detection that survived filtering, ready for association.
struct KeptPrediction {
  int query_index = 0;
  bool open = false;
  int class_id = -1;           // argmax real class (closed) or -1 (open)
  double confidence = 0.0;     // class probability or objectness
  std::vector<uint8_t> region; // t*fh*fw thresholded mask
  std::vector<double> query;   // embedding row used for association
};

// Keeps closed-world predictions whose best real-class probability reaches
// tau_cw, then open-world predictions whose objectness reaches tau_ow and
// whose clip mask overlaps every kept closed detection with IoU below
// dup_iou (closed world takes precedence). Predictions with an empty clip
// mask are dropped.
std::vector<KeptPrediction> filter_predictions(const ClipOutput& out,
                                               const TrackerParams& p);

// Links detections to tracks by minimum-cost assignment on
// 1 - cosine(track.last_query, prediction.query), admitting only pairs with
// cost <= assoc_gate and only tracks unseen for at most max_age frames.
// Matched tracks take the new query and reset their age; unmatched
// detections open new tracks; every unmatched track ages by clip_len.
// Returns the track index (into set.tracks) for each detection.
std::vector<int> associate(TrackSet& set, const std::vector<KeptPrediction>& kept,
                           const TrackerParams& p);

// Model-or-fake seam so the pipeline is testable with scripted outputs.
class ClipBackend {
 public:
  virtual ~ClipBackend() = default;
  virtual ClipOutput forward(const Tensor& frames) const = 0;
  // One caption per requested (query row, region) pair, as words.
  virtual std::vector<std::vector<std::string>> captions(
      const ClipOutput& out,
      const std::vector<std::pair<int, std::vector<uint8_t>>>& objects) const = 0;
};

class ModelBackend final : public ClipBackend {
 public:
  explicit ModelBackend(const Model& model) : model_(&model) {}
  ClipOutput forward(const Tensor& frames) const override;
  std::vector<std::vector<std::string>> captions(
      const ClipOutput& out,
      const std::vector<std::pair<int, std::vector<uint8_t>>>& objects) const override;

 private:
  const Model* model_;
};

// Splits the video into consecutive clips of clip_len frames (the last clip
// repeats the final frame; those padding frames never reach the output),
// then per clip runs detection, filtering, association, and captioning.
// Clip k's outputs never depend on frames after clip k.
// Errors: "empty-video".
TrackSet process_video(const ClipBackend& backend, const VideoSample& video,
                       const TrackerParams& p);

// Ground truth as tracks: one track per GT identity with its visible-region
// masks, boxes, full confidence, and one caption segment per contiguous
// visible run. Used for evaluation and for oracle "perfect predictions".
std::vector<Track> gt_tracks(const VideoSample& video);

// JSON interchange consumed by the evaluation tools. Round-trips exactly
// (masks via RLE). Errors: "missing-file", "bad-json", "bad-rle".
void write_tracks(const std::string& path, const std::vector<Track>& tracks, int height,
                  int width);
struct TrackFile {
  std::vector<Track> tracks;
  int height = 0, width = 0;
};
TrackFile read_tracks(const std::string& path);

}  // namespace owvis
