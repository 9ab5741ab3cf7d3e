#pragma once

#include <string>
#include <vector>

#include "owvis/synthworld.hpp"
#include "owvis/vocab.hpp"

namespace owvis {

// One stored video: rendered frames plus ground truth.
struct DatasetVideo {
  std::string id;
  std::string split;  // "train" or "eval"
  VideoSample sample;
};

// A generated corpus with its open-world class split.
struct Dataset {
  WorldSpec world;
  std::vector<std::string> heldout;  // class names absent from train videos
  Vocabulary vocab;
  std::vector<DatasetVideo> videos;

  std::vector<int> heldout_ids() const;  // indices into world.shape_classes
  std::vector<int> common_ids() const;
  const DatasetVideo& video(const std::string& id) const;  // Errors: "missing-video"
};

struct GenerateOptions {
  int train_videos = 24;
  int eval_videos = 8;
  std::vector<std::string> heldout = {"cross", "ring"};
};

// Renders the corpus. Train videos draw objects only from the common
// classes; every eval video is guaranteed at least one held-out and one
// common object. Deterministic in spec.seed.
Dataset generate_dataset(const WorldSpec& spec, const GenerateOptions& opts);

// Directory layout: manifest.json at the root, one subdirectory per video
// holding frames.owt (binary tensor) and annos.json (per-frame ground truth).
void write_dataset(const Dataset& ds, const std::string& dir);

// Errors (all DataError): "missing-file", "bad-magic", "bad-version",
// "truncated-file", "bad-json", "bad-rle".
Dataset read_dataset(const std::string& dir);

// Raw frame tensor file: magic "OWVT", version, extents, little-endian f32.
void write_frames(const std::string& path, const VideoSample& v);
void read_frames(const std::string& path, VideoSample& v);

}  // namespace owvis
