#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "owvis/common.hpp"

namespace owvis {

// Every tunable of the system, with its default. Parsed from `key=value`
// lines (config files) or repeated --set key=value flags. Unknown keys and
// malformed values are rejected.
struct Config {
  // model
  int model_dim = 64;        // shared channel width C
  int decoder_layers = 3;    // query decoder depth
  int n_cw_queries = 20;     // learned closed-world queries
  int ow_grid = 7;           // open-world prompt grid is ow_grid^2 points
  double ow_fourier_scale = 1.0;
  int clip_len = 2;          // frames per processed clip
  int n_text = 32;           // caption-side text embeddings per object
  int o2t_layers = 2;        // object-to-text attention depth
  std::string decoder_mode = "trainable";  // caption decoder: trainable | frozen-random
  int max_caption_len = 8;   // decode budget, includes the end token
  int num_classes = 6;       // closed-world classes (from the dataset at train time)
  bool use_open_queries = true;
  bool use_caption_mask = true;
  bool use_contrastive = true;

  // losses
  double lambda_ow = 1.0;
  double lambda_cw = 1.0;
  double lambda_cont = 0.1;
  double lambda_cap = 1.0;
  double lambda_cls = 2.0;   // matching-cost weight on class score
  double lambda_bce = 5.0;   // matching-cost weight on mask cross-entropy
  double lambda_dice = 5.0;  // matching-cost weight on mask overlap
  std::string cont_scope = "foreground";  // foreground | all
  bool cont_normalize = true;

  // training
  uint64_t seed = 1;
  double lr = 1e-4;
  double weight_decay = 0.05;
  int batch_size = 8;
  int train_steps = 200;
  std::string precision = "f32";  // f32 | f64
  double grad_clip = 0.0;         // 0 disables clipping

  // tracker
  double tau_cw = 0.5;      // min class confidence for closed-world outputs
  double tau_ow = 0.5;      // min objectness for open-world outputs
  double dup_iou = 0.7;     // open proposals overlapping kept ones get dropped
  double assoc_gate = 0.5;  // max embedding distance to join an existing track
  int max_age = 0;          // clips a track survives unmatched; 0 = 2 clips

  // world generation
  int world_size = 64;
  int video_frames = 8;
  int max_objects = 4;
  int max_speed = 2;
  double occlusion_prob = 0.25;
  double caption_present_prob = 1.0;
  std::string heldout = "cross,ring";  // comma-separated class names
  int train_videos = 24;
  int eval_videos = 8;

  // Applies one `key=value` override. Errors (UsageError):
  // "unknown-config-key", "bad-config-value".
  void set(const std::string& key, const std::string& value);

  // Applies `key=value` lines; '#' starts a comment, blank lines skipped.
  void apply_text(const std::string& text);
  // Errors: "missing-file" (DataError) plus the set() errors.
  void apply_file(const std::string& path);

  // Full key=value listing, sorted by key; parseable by apply_text.
  std::string serialize() const;

  std::vector<std::string> heldout_names() const;

  // Range/consistency check. Errors: UsageError "bad-config-value".
  void validate() const;
};

}  // namespace owvis
