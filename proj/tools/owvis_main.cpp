// Command-line surface of the toolkit: dataset generation, training,
// tracking + captioning evaluation, overlay rendering, and a self-contained
// numeric verification suite.
//
// Exit codes: 0 success, 1 bad usage or bad configuration, 2 malformed or
// inconsistent input data, 3 numeric verification failure.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "owvis/checkpoint.hpp"
#include "owvis/common.hpp"
#include "owvis/config.hpp"
#include "owvis/dataset.hpp"
#include "owvis/evalkit.hpp"
#include "owvis/losses.hpp"
#include "owvis/mask.hpp"
#include "owvis/matching.hpp"
#include "owvis/model.hpp"
#include "owvis/ops.hpp"
#include "owvis/rng.hpp"
#include "owvis/synthworld.hpp"
#include "owvis/tensor.hpp"
#include "owvis/tracker.hpp"
#include "owvis/trainer.hpp"
#include "owvis/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace owvis {
namespace {

// ---------------------------------------------------------------------------
// shared plumbing

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_file, "Config file of key=value lines");
  cmd->add_option("--set", args.sets,
                  "Override one config key (key=value; repeatable)");
}

void apply_overrides(Config& cfg, const ConfigArgs& args) {
  if (!args.config_file.empty()) cfg.apply_file(args.config_file);
  for (const std::string& kv : args.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw UsageError("bad-config-value", "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

// Every command that produces files drops the effective config next to them.
void echo_config(const Config& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir + "/config.txt", std::ios::binary);
  if (!f) throw DataError("write-failed", "cannot write " + dir + "/config.txt");
  f << cfg.serialize();
}

WorldSpec world_from(const Config& cfg) {
  WorldSpec spec;
  spec.frame_size = cfg.world_size;
  spec.num_frames = cfg.video_frames;
  spec.max_objects = cfg.max_objects;
  spec.max_speed = cfg.max_speed;
  spec.occlusion_prob = cfg.occlusion_prob;
  spec.caption_present_prob = cfg.caption_present_prob;
  spec.seed = cfg.seed;
  return spec;
}

// ---------------------------------------------------------------------------
// generate

void cmd_generate(Config cfg, const std::string& out_dir) {
  cfg.validate();
  fs::path out(out_dir);
  if (fs::exists(out)) {
    if (!fs::is_directory(out))
      throw UsageError("out-dir-not-empty", out_dir + " exists and is not a directory");
    if (!fs::is_empty(out))
      throw UsageError("out-dir-not-empty", out_dir + " already holds files");
  }

  GenerateOptions opts;
  opts.train_videos = cfg.train_videos;
  opts.eval_videos = cfg.eval_videos;
  opts.heldout = cfg.heldout_names();
  Dataset ds = generate_dataset(world_from(cfg), opts);
  write_dataset(ds, out_dir);
  echo_config(cfg, out_dir);

  std::cout << "generate: " << ds.videos.size() << " videos ("
            << opts.train_videos << " train, " << opts.eval_videos << " eval), "
            << ds.world.shape_classes.size() << " classes, held out:";
  for (const auto& h : ds.heldout) std::cout << " " << h;
  std::cout << "\ngenerate: wrote " << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  bool no_open_queries = false;
  bool no_contrastive = false;
  bool no_caption_mask = false;
  std::string decoder_mode;  // empty = keep the config value
};

void cmd_train(Config cfg, const std::string& data_dir, const std::string& out_dir,
               const TrainFlags& flags) {
  Dataset ds = read_dataset(data_dir);
  cfg.num_classes = static_cast<int>(ds.world.shape_classes.size());
  if (flags.no_open_queries) cfg.use_open_queries = false;
  if (flags.no_contrastive) cfg.use_contrastive = false;
  if (flags.no_caption_mask) cfg.use_caption_mask = false;
  if (!flags.decoder_mode.empty()) cfg.decoder_mode = flags.decoder_mode;
  cfg.validate();

  fs::create_directories(out_dir);
  Model model(cfg, ds.vocab);
  TrainStats stats = train_model(model, ds, out_dir + "/loss.csv");
  save_checkpoint(out_dir + "/model.owck", model);
  echo_config(cfg, out_dir);

  if (stats.history.empty()) {
    std::cout << "train: 0 steps; checkpoint equals initialization\n";
  } else {
    const StepLosses& first = stats.history.front();
    const StepLosses& last = stats.history.back();
    std::cout << "train: " << stats.history.size() << " steps; L_total "
              << first.total << " -> " << last.total << "\n";
  }
  std::cout << "train: wrote " << out_dir << "/model.owck and " << out_dir
            << "/loss.csv\n";
}

// ---------------------------------------------------------------------------
// eval

void require_same_vocab(const Model& model, const Dataset& ds) {
  if (model.vocab().tokens() != ds.vocab.tokens())
    throw DataError("vocab-mismatch",
                    "checkpoint vocabulary does not match the dataset vocabulary");
}

void print_report(const EvalReport& rep) {
  auto row = [](const char* name, const SplitReport& s) {
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(4);
    o << name << "  OWTA=" << s.owta << "  OWTA@0.5=" << s.owta_at_05
      << "  DetA=" << s.det_a << "  AssA=" << s.ass_a << "  CapA=" << s.cap_a
      << "  CHOTA=" << s.chota << "  AP50=" << s.ap50;
    std::cout << o.str() << "\n";
  };
  row("eval: all     ", rep.all);
  row("eval: common  ", rep.common);
  row("eval: uncommon", rep.uncommon);
}

void cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
              const std::string& out_dir, const ConfigArgs& args, bool oracle_gt) {
  Model model = load_checkpoint(ckpt_path);
  Dataset ds = read_dataset(data_dir);
  require_same_vocab(model, ds);

  Config cfg = model.cfg();
  apply_overrides(cfg, args);
  cfg.validate();
  TrackerParams params = TrackerParams::from_config(cfg);

  std::vector<const DatasetVideo*> videos;
  for (const auto& v : ds.videos)
    if (v.split == "eval") videos.push_back(&v);
  if (videos.empty())
    throw DataError("missing-video", "dataset has no eval-split videos");

  const std::string tracks_dir = out_dir + "/tracks";
  fs::create_directories(tracks_dir);
  ModelBackend backend(model);
  const int n = static_cast<int>(videos.size());
  // Videos are independent; each worker writes only its own files.
  parallel_for(n, [&](int i) {
    const DatasetVideo& dv = *videos[i];
    std::vector<Track> gt = gt_tracks(dv.sample);
    std::vector<Track> pred =
        oracle_gt ? gt : process_video(backend, dv.sample, params).tracks;
    write_tracks(tracks_dir + "/" + dv.id + ".gt.json", gt, dv.sample.h, dv.sample.w);
    write_tracks(tracks_dir + "/" + dv.id + ".pred.json", pred, dv.sample.h,
                 dv.sample.w);
  });

  // Score what was written, through the declared interchange format.
  std::vector<VideoEval> evals(n);
  for (int i = 0; i < n; ++i) {
    const DatasetVideo& dv = *videos[i];
    evals[i].gt = read_tracks(tracks_dir + "/" + dv.id + ".gt.json").tracks;
    evals[i].pred = read_tracks(tracks_dir + "/" + dv.id + ".pred.json").tracks;
  }
  EvalReport rep = evaluate(evals, ds.heldout_ids());
  write_report(out_dir + "/report.json", rep);
  write_report_csv(out_dir + "/report.csv", rep);
  echo_config(cfg, out_dir);

  std::cout << "eval: " << n << " videos"
            << (oracle_gt ? " (ground truth scored against itself)" : "") << "\n";
  print_report(rep);
  std::cout << "eval: wrote " << out_dir << "/report.json and report.csv\n";
}

// ---------------------------------------------------------------------------
// infer

constexpr std::array<std::array<uint8_t, 3>, 12> kTrackPalette{{
    {{230, 25, 75}},
    {{60, 180, 75}},
    {{255, 225, 25}},
    {{0, 130, 200}},
    {{245, 130, 48}},
    {{145, 30, 180}},
    {{70, 240, 240}},
    {{240, 50, 230}},
    {{60, 245, 160}},
    {{250, 190, 212}},
    {{0, 128, 128}},
    {{220, 190, 255}},
}};

std::array<uint8_t, 3> track_color(int track_id) {
  return kTrackPalette[static_cast<size_t>(track_id) % kTrackPalette.size()];
}

void write_ppm(const std::string& path, int w, int h,
               const std::vector<uint8_t>& rgb) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write-failed", "cannot write " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()),
          static_cast<std::streamsize>(rgb.size()));
}

void overlay_mask(std::vector<uint8_t>& rgb, const BinaryMask& mask,
                  const std::array<uint8_t, 3>& color) {
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      if (!mask.at(y, x)) continue;
      size_t base = (static_cast<size_t>(y) * mask.w + x) * 3;
      for (int c = 0; c < 3; ++c) {
        double v = 0.45 * rgb[base + c] + 0.55 * color[c];
        rgb[base + c] = static_cast<uint8_t>(std::lround(v));
      }
    }
}

void overlay_box(std::vector<uint8_t>& rgb, int w, int h, const NormBox& box,
                 const std::array<uint8_t, 3>& color) {
  auto clampi = [](int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); };
  int x0 = clampi(static_cast<int>(std::lround((box.cx - box.w / 2) * w)), 0, w - 1);
  int x1 = clampi(static_cast<int>(std::lround((box.cx + box.w / 2) * w)) - 1, 0, w - 1);
  int y0 = clampi(static_cast<int>(std::lround((box.cy - box.h / 2) * h)), 0, h - 1);
  int y1 = clampi(static_cast<int>(std::lround((box.cy + box.h / 2) * h)) - 1, 0, h - 1);
  auto paint = [&](int y, int x) {
    size_t base = (static_cast<size_t>(y) * w + x) * 3;
    for (int c = 0; c < 3; ++c) rgb[base + c] = color[c];
  };
  for (int x = x0; x <= x1; ++x) {
    paint(y0, x);
    paint(y1, x);
  }
  for (int y = y0; y <= y1; ++y) {
    paint(y, x0);
    paint(y, x1);
  }
}

void cmd_infer(const std::string& ckpt_path, const std::string& data_dir,
               const std::string& out_dir, std::string video_id,
               const ConfigArgs& args) {
  Model model = load_checkpoint(ckpt_path);
  Dataset ds = read_dataset(data_dir);
  require_same_vocab(model, ds);

  Config cfg = model.cfg();
  apply_overrides(cfg, args);
  cfg.validate();
  TrackerParams params = TrackerParams::from_config(cfg);

  if (video_id.empty()) {
    for (const auto& v : ds.videos)
      if (v.split == "eval") {
        video_id = v.id;
        break;
      }
    if (video_id.empty() && !ds.videos.empty()) video_id = ds.videos.front().id;
    if (video_id.empty()) throw DataError("missing-video", "dataset holds no videos");
  }
  const DatasetVideo& dv = ds.video(video_id);
  const VideoSample& video = dv.sample;

  ModelBackend backend(model);
  TrackSet result = process_video(backend, video, params);

  fs::create_directories(out_dir);
  // Per-frame detections, in stable track order.
  std::vector<std::vector<std::pair<const Track*, const TrackFrame*>>> by_frame(
      static_cast<size_t>(video.t));
  for (const Track& tr : result.tracks)
    for (const TrackFrame& tf : tr.frames) by_frame[tf.frame].push_back({&tr, &tf});

  char name[32];
  for (int f = 0; f < video.t; ++f) {
    std::vector<uint8_t> rgb(static_cast<size_t>(video.h) * video.w * 3);
    for (size_t i = 0; i < rgb.size(); ++i) {
      double v = std::lround(video.frames[i] * 255.0);
      rgb[i] = static_cast<uint8_t>(std::max(0.0, std::min(255.0, v)));
    }
    for (const auto& [tr, tf] : by_frame[f]) {
      overlay_mask(rgb, tf->mask, track_color(tr->track_id));
      overlay_box(rgb, video.w, video.h, tf->box, track_color(tr->track_id));
    }
    std::snprintf(name, sizeof(name), "frame_%04d.ppm", f);
    write_ppm(out_dir + "/" + name, video.w, video.h, rgb);
  }

  json jtracks = json::array();
  for (const Track& tr : result.tracks) {
    json segments = json::array();
    for (const CaptionSegment& seg : tr.captions)
      segments.push_back(
          {{"start", seg.start}, {"end", seg.end}, {"tokens", seg.tokens}});
    auto color = track_color(tr.track_id);
    jtracks.push_back({{"id", tr.track_id},
                       {"origin", tr.open ? "open" : "closed"},
                       {"class_id", tr.class_id},
                       {"color", {color[0], color[1], color[2]}},
                       {"captions", segments}});
  }
  json sidecar{{"format_version", 1},
               {"video", video_id},
               {"height", video.h},
               {"width", video.w},
               {"tracks", jtracks}};
  std::ofstream jf(out_dir + "/captions.json", std::ios::binary);
  if (!jf) throw DataError("write-failed", "cannot write " + out_dir + "/captions.json");
  jf << sidecar.dump(1) << "\n";
  echo_config(cfg, out_dir);

  std::cout << "infer: video " << video_id << ": wrote " << video.t
            << " frames and captions for " << result.tracks.size() << " tracks to "
            << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// verify

// Negative-control op: the forward value is sum(x^2) but the recorded
// backward reports 3x instead of the true 2x. Lets the suite demonstrate
// that a wrong gradient is actually caught.
Tensor wrong_gradient_square_sum(const Tensor& x) {
  const std::vector<double>& xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v * v;
  std::vector<double> out{s};
  apply_precision(out);
  Tensor y(Shape{1}, std::move(out));
  Tape* tape = Tape::active();
  if (tape && x.recorded()) {
    std::shared_ptr<const std::vector<double>> xs = x.storage();
    const int xn = x.node();
    int node = tape->add_node(1, {xn}, [xs, xn](Tape& t, const std::vector<double>& g) {
      std::vector<double>& gx = t.grad_buffer(xn);
      for (size_t i = 0; i < xs->size(); ++i) gx[i] += g[0] * 3.0 * (*xs)[i];
    });
    y.bind_node(node, tape->id());
  }
  return y;
}

// A tiny hand-made video: one red 4x4 block, aligned to the feature grid.
VideoSample block_video_8x8() {
  VideoSample v;
  v.t = 1;
  v.h = 8;
  v.w = 8;
  v.frames.assign(static_cast<size_t>(v.t) * v.h * v.w * 3, 0.1f);
  v.gt.resize(1);
  FrameObject o;
  o.track_id = 0;
  o.class_id = 1;
  o.mask = BinaryMask(8, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      o.mask.set(y, x, 1);
      size_t base = (static_cast<size_t>(y) * 8 + x) * 3;
      v.frames[base] = 0.9f;
      v.frames[base + 1] = 0.05f;
      v.frames[base + 2] = 0.05f;
    }
  o.box = tight_bbox(o.mask);
  o.caption = {"a", "red", "square", "moving", "still"};
  o.caption_present = true;
  v.gt[0] = {o};
  return v;
}

BinaryMask band_mask_8x8(int rows_from) {
  BinaryMask m(8, 8);
  for (int y = rows_from; y < rows_from + 2; ++y)
    for (int x = 0; x < 8; ++x) m.set(y, x, 1);
  return m;
}

Track simple_track(int id, int cls, const std::vector<std::pair<int, BinaryMask>>& dets,
                   const std::vector<std::string>& words) {
  Track t;
  t.track_id = id;
  t.class_id = cls;
  t.caption_present = true;
  for (const auto& [frame, mask] : dets)
    t.frames.push_back({frame, mask, tight_bbox(mask), 1.0});
  if (!dets.empty())
    t.captions.push_back({dets.front().first, dets.back().first + 1, words});
  return t;
}

void verify_fail(const std::string& check, const std::string& detail) {
  throw VerifyError("verify-failed", check + ": " + detail);
}

void check_assignment_oracle() {
  // Hand cases with known optima and tie-breaks.
  if (match_min_cost({{4, 1}, {2, 8}}) != std::vector<int>{1, 0})
    verify_fail("assignment", "2x2 hand case");
  if (match_min_cost({{3, 3, 3}, {3, 3, 3}, {3, 3, 3}}) != std::vector<int>{0, 1, 2})
    verify_fail("assignment", "all-equal tie-break");
  // Random integer and quarter-integer matrices against exhaustive search;
  // integral costs make the lexicographic tie-break exact.
  Rng rng(2024);
  for (int it = 0; it < 400; ++it) {
    int rows = rng.uniform_int(1, 7);
    int cols = rows + rng.uniform_int(0, 3);
    std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
    for (auto& r : cost)
      for (double& c : r) c = rng.uniform_int(0, 9) * (it % 2 ? 0.25 : 1.0);
    if (match_min_cost(cost) != match_brute_force(cost))
      verify_fail("assignment", "mismatch vs exhaustive search at case " +
                                    std::to_string(it));
  }
  std::cout << "ok  assignment-oracle      402 cost matrices match exhaustive search exactly\n";
}

void check_loss_gradients(bool inject_fault) {
  const double tol = 1e-4, eps = 1e-5;
  if (inject_fault) {
    Parameter p("fault.w", Shape{4});
    p.values() = {0.5, -1.25, 2.0, 0.75};
    auto f = [&]() { return wrong_gradient_square_sum(p.use()); };
    GradCheckResult r = finite_diff_check(f, {&p}, eps);
    if (r.max_rel_err >= tol)
      verify_fail("loss-gradients", "finite differences disagree with recorded "
                                    "gradients (max rel err " +
                                        std::to_string(r.max_rel_err) + ")");
  }

  Config cfg;
  cfg.model_dim = 8;
  cfg.decoder_layers = 1;  // the first layer attends everywhere: smooth in params
  cfg.n_cw_queries = 3;
  cfg.ow_grid = 2;
  cfg.clip_len = 1;
  cfg.n_text = 2;
  cfg.o2t_layers = 1;
  cfg.max_caption_len = 8;
  cfg.num_classes = 3;
  cfg.use_caption_mask = false;  // thresholded regions are not differentiable
  cfg.precision = "f64";

  Vocabulary vocab = Vocabulary::standard();
  VideoSample video = block_video_8x8();
  ClipTargets targets = build_targets(video, 0, 1, vocab, cfg.max_caption_len);
  if (targets.objects.empty()) verify_fail("loss-gradients", "fixture lost its object");
  Tensor frames = Model::frames_tensor(video, 0, 1);

  struct Pick {
    const char* name;
    Tensor LossOutputs::*member;
  };
  const std::vector<Pick> picks = {
      {"open-world", &LossOutputs::ow},   {"closed-world", &LossOutputs::cw},
      {"separation", &LossOutputs::cont}, {"caption", &LossOutputs::cap},
      {"total", &LossOutputs::total},
  };

  double worst = 0.0;
  int64_t coords = 0;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    cfg.seed = 100 + seed;
    Model model(cfg, vocab);
    for (size_t ci = 0; ci < picks.size(); ++ci) {
      auto f = [&, ci]() {
        ClipOutput out = model.transformer().forward_clip(frames);
        LossOutputs l = compute_losses(out, &model.captions(), targets, cfg);
        return l.*(picks[ci].member);
      };
      GradCheckResult r = finite_diff_check(f, model.params().trainable(), eps, 40,
                                            seed * 131 + ci);
      worst = std::max(worst, r.max_rel_err);
      coords += r.coords_checked;
      if (r.max_rel_err >= tol)
        verify_fail("loss-gradients",
                    std::string(picks[ci].name) + " term at seed " +
                        std::to_string(seed) + ": max rel err " +
                        std::to_string(r.max_rel_err));
    }
  }
  std::ostringstream o;
  o.setf(std::ios::scientific);
  o.precision(2);
  o << worst;
  std::cout << "ok  loss-gradients         max rel err " << o.str() << " over "
            << coords << " coordinates (5 loss terms x 3 seeds)\n";
}

void check_masked_attention() {
  Rng rng(77);
  auto randt = [&](int r, int c) {
    std::vector<double> v(static_cast<size_t>(r) * c);
    for (double& x : v) x = rng.gaussian();
    return Tensor(Shape{r, c}, std::move(v));
  };
  for (int it = 0; it < 20; ++it) {
    const int n = 3 + it % 3, p = 6 + it % 5, d = 8;
    Tensor q = randt(n, d), k = randt(p, d), v = randt(p, d);

    // An all-covering region produces the all-zero additive mask, and the
    // masked forward is bitwise the unmasked one.
    Tensor full_mask = CaptionHead::region_attention_mask(std::vector<uint8_t>(p, 1), n);
    for (double m : full_mask.values())
      if (m != 0.0) verify_fail("masked-attention", "full region mask not all zero");
    if (attention(q, k, v, full_mask).values() !=
        attention(q, k, v, Tensor::zeros({n, p})).values())
      verify_fail("masked-attention", "all-zero mask changed the forward");

    // Corrupting key/value rows that every query row excludes leaves the
    // attention output bitwise unchanged.
    std::vector<uint8_t> region(p, 0);
    for (int i = 0; i < p; ++i) region[i] = rng.uniform() < 0.5 ? 1 : 0;
    region[0] = 1;  // at least one admitted...
    region[1] = 0;  // ...and one excluded location
    Tensor mask = CaptionHead::region_attention_mask(region, n);
    std::vector<double> kv = k.values(), vv = v.values();
    for (int i = 0; i < p; ++i)
      if (!region[i])
        for (int j = 0; j < d; ++j) {
          kv[static_cast<size_t>(i) * d + j] += 1e6;
          vv[static_cast<size_t>(i) * d + j] -= 1e6;
        }
    Tensor k2(Shape{p, d}, std::move(kv)), v2(Shape{p, d}, std::move(vv));
    if (attention(q, k, v, mask).values() != attention(q, k2, v2, mask).values())
      verify_fail("masked-attention", "excluded cells leaked into the output");

    // Same property through the per-query mask built from region logits:
    // a location predicted outside every query's region cannot matter.
    std::vector<double> ml(static_cast<size_t>(n) * p);
    for (double& x : ml) x = rng.gaussian();
    for (int r = 0; r < n; ++r) {
      ml[static_cast<size_t>(r) * p + 0] = 2.0;   // keep every row nonempty
      ml[static_cast<size_t>(r) * p + 1] = -2.0;  // location 1 excluded everywhere
    }
    Tensor lmask = layer_attention_mask(Tensor(Shape{n, p}, ml));
    std::vector<double> kv2 = k.values(), vv2 = v.values();
    for (int j = 0; j < d; ++j) {
      kv2[static_cast<size_t>(1) * d + j] += 1e6;
      vv2[static_cast<size_t>(1) * d + j] += 1e6;
    }
    Tensor k3(Shape{p, d}, std::move(kv2)), v3(Shape{p, d}, std::move(vv2));
    if (attention(q, k, v, lmask).values() != attention(q, k3, v3, lmask).values())
      verify_fail("masked-attention", "logit-derived mask leaked excluded cells");
  }
  std::cout << "ok  masked-attention       20 instances bitwise invariant to "
               "excluded-cell corruption\n";
}

void check_unmatched_open_contract() {
  Config cfg;
  cfg.num_classes = 3;
  cfg.use_contrastive = false;
  Rng rng(99);
  ClipTargets tg;
  tg.t = 1;
  tg.fh = 1;
  tg.fw = 2;
  ClipTargets::Obj obj;
  obj.track_id = 0;
  obj.class_id = 0;
  obj.region = {1, 0};
  obj.caption_present = false;
  tg.objects.push_back(obj);

  auto make = [&](double stray_obj, double stray_mask) {
    // one closed query, two open proposals; proposal 0 matches, 1 is a stray
    ClipOutput out;
    out.n_cw = 1;
    out.n_ow = 2;
    out.fmap.t = 1;
    out.fmap.h = 1;
    out.fmap.w = 2;
    out.fmap.feat = Tensor::zeros({2, 4});
    out.fmap.pos = Tensor::zeros({2, 4});
    out.cls_logits = Tensor(Shape{1, 3}, {4.0, -4.0, -4.0});
    out.obj_logits = Tensor(Shape{2, 1}, {3.0, stray_obj});
    out.mask_logits =
        Tensor(Shape{3, 2}, {40.0, -40.0, 40.0, -40.0, stray_mask, stray_mask});
    out.queries = Tensor(Shape{3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 1.0});
    out.boxes = Tensor::zeros({3, 4});
    return out;
  };

  for (int scene = 0; scene < 20; ++scene) {
    LossOutputs a =
        compute_losses(make(rng.uniform(-6.0, -0.5), rng.uniform(-9.0, 9.0)), nullptr,
                       tg, cfg);
    LossOutputs b =
        compute_losses(make(rng.uniform(-6.0, -0.5), rng.uniform(-9.0, 9.0)), nullptr,
                       tg, cfg);
    if (a.ow_match != std::vector<int>{0} || b.ow_match != std::vector<int>{0})
      verify_fail("unmatched-open", "fixture matching drifted");
    if (a.ow.value() != b.ow.value())
      verify_fail("unmatched-open",
                  "perturbing an unmatched open proposal changed the open-world loss");

    // the analogous perturbation on an unmatched closed query is visible
    double bump = rng.uniform(0.5, 3.0);
    auto closed = [&](double z) {
      ClipOutput out;
      out.n_cw = 2;
      out.n_ow = 0;
      out.fmap.t = 1;
      out.fmap.h = 1;
      out.fmap.w = 2;
      out.fmap.feat = Tensor::zeros({2, 4});
      out.fmap.pos = Tensor::zeros({2, 4});
      out.cls_logits = Tensor(Shape{2, 3}, {4.0, -4.0, -4.0, z, 0.0, 0.0});
      out.mask_logits = Tensor(Shape{2, 2}, {40.0, -40.0, 1.0, 1.0});
      out.queries = Tensor(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
      out.boxes = Tensor::zeros({2, 4});
      return out;
    };
    LossOutputs c = compute_losses(closed(0.0), nullptr, tg, cfg);
    LossOutputs d = compute_losses(closed(bump), nullptr, tg, cfg);
    if (c.cw.value() == d.cw.value())
      verify_fail("unmatched-open",
                  "perturbing an unmatched closed query left the closed-world "
                  "loss unchanged");
  }
  std::cout << "ok  unmatched-open         20 scenes: strays invisible to the "
               "open-world loss, visible to the closed-world one\n";
}

void check_metric_oracles() {
  auto near = [](double a, double b, double tol) { return std::fabs(a - b) <= tol; };

  // identity swap: detection perfect, association third, captions perfect
  BinaryMask a = band_mask_8x8(0), b = band_mask_8x8(4);
  std::vector<std::string> words{"a", "red", "square", "moving", "left"};
  VideoEval swap;
  swap.gt.push_back(simple_track(0, 0, {{0, a}, {1, a}}, words));
  swap.gt.push_back(simple_track(1, 1, {{0, b}, {1, b}}, words));
  swap.pred.push_back(simple_track(0, 0, {{0, a}, {1, b}}, words));
  swap.pred.push_back(simple_track(1, 1, {{0, b}, {1, a}}, words));
  EvalReport rs = evaluate({swap}, {});
  if (rs.all.det_re != 1.0 || rs.all.det_a != 1.0)
    verify_fail("metrics", "id-swap detection should stay perfect");
  if (!near(rs.all.ass_a, 1.0 / 3.0, 1e-12))
    verify_fail("metrics", "id-swap association accuracy != 1/3");
  if (!near(rs.all.owta_at_05, 0.5773502691896258, 1e-9))
    verify_fail("metrics", "id-swap OWTA@0.5 != sqrt(1/3)");
  if (!near(rs.all.chota, 0.6933612743506348, 1e-9))
    verify_fail("metrics", "id-swap CHOTA != cbrt(1/3)");

  // caption token overlap
  if (!near(caption_token_f1({"a", "red", "square"}, {"a", "red", "circle"}),
            2.0 / 3.0, 1e-12))
    verify_fail("metrics", "caption F1 != 2/3");
  if (caption_token_f1({}, {}) != 1.0 || caption_token_f1({"a"}, {}) != 0.0)
    verify_fail("metrics", "caption F1 empty-side conventions");

  // two ground-truth tracks, one perfect prediction: AP caps at 1/2
  VideoEval half;
  half.gt.push_back(simple_track(0, 0, {{0, a}, {1, a}}, words));
  half.gt.push_back(simple_track(1, 1, {{0, b}, {1, b}}, words));
  half.pred.push_back(simple_track(0, 0, {{0, a}, {1, a}}, words));
  EvalReport rh = evaluate({half}, {});
  if (!near(rh.all.ap50, 0.5, 1e-12) || !near(rh.all.ap75, 0.5, 1e-12))
    verify_fail("metrics", "one-of-two AP != 1/2");

  // rendered ground truth scored against itself is perfect on every split
  WorldSpec spec;
  spec.frame_size = 16;
  spec.num_frames = 4;
  spec.occlusion_prob = 0.3;
  VideoSample video = generate_video(spec, {0, 1, 2, 3, 4, 5}, {4}, 21);
  std::vector<Track> gt = gt_tracks(video);
  EvalReport rp = evaluate({{gt, gt}}, {4, 5});
  for (const SplitReport* s : {&rp.all, &rp.common, &rp.uncommon}) {
    if (s->owta != 1.0 || s->chota != 1.0 || s->ap50 != 1.0 || s->fp != 0 || s->fn != 0)
      verify_fail("metrics", "ground truth against itself is not perfect");
  }
  std::cout << "ok  metric-oracles         id-swap, caption-F1, capped AP and "
               "perfect-ground-truth fixtures exact\n";
}

void cmd_verify(bool inject_fault) {
  set_precision(Precision::f64);
  set_debug_checks(true);
  check_assignment_oracle();
  check_loss_gradients(inject_fault);
  check_masked_attention();
  check_unmatched_open_contract();
  check_metric_oracles();
  std::cout << "verify: all 5 check groups passed\n";
}

}  // namespace
}  // namespace owvis

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  using namespace owvis;

  CLI::App app{
      "owvis: open-world video instance segmentation and captioning on a "
      "synthetic video world.\nSet OWVIS_THREADS to cap parallelism."};
  app.require_subcommand(1);

  std::string gen_out;
  ConfigArgs gen_cfg;
  CLI::App* gen = app.add_subcommand(
      "generate", "Render a synthetic video dataset with an open-world class split");
  gen->add_option("--out", gen_out, "Output dataset directory (must not hold files)")
      ->required();
  add_config_options(gen, gen_cfg);

  std::string train_data, train_out;
  ConfigArgs train_cfg;
  TrainFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "Train a model on a generated dataset");
  train->add_option("--data", train_data, "Dataset directory (from `owvis generate`)")
      ->required();
  train->add_option("--out", train_out, "Output directory for model.owck and loss.csv")
      ->required();
  add_config_options(train, train_cfg);
  train->add_flag("--no-open-queries", train_flags.no_open_queries,
                  "Drop the open-world query grid and its objectness loss");
  train->add_flag("--no-contrastive", train_flags.no_contrastive,
                  "Disable the query-separation loss term");
  train->add_flag("--no-caption-mask", train_flags.no_caption_mask,
                  "Let caption attention read the whole clip instead of the "
                  "object's region");
  train->add_option("--decoder-mode", train_flags.decoder_mode,
                    "Caption decoder mode: trainable | frozen-random");

  std::string eval_ckpt, eval_data, eval_out;
  ConfigArgs eval_cfg;
  bool eval_oracle = false;
  CLI::App* eval = app.add_subcommand(
      "eval", "Track and caption the eval split, then score it against ground truth");
  eval->add_option("--ckpt", eval_ckpt, "Model checkpoint (model.owck)")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--out", eval_out, "Output directory for report.json/report.csv")
      ->required();
  add_config_options(eval, eval_cfg);
  eval->add_flag("--oracle-gt", eval_oracle,
                 "Score the ground truth against itself (pipeline fixture)");

  std::string infer_ckpt, infer_data, infer_out, infer_video;
  ConfigArgs infer_cfg;
  CLI::App* infer = app.add_subcommand(
      "infer", "Render per-frame mask overlays (PPM) plus a captions JSON sidecar");
  infer->add_option("--ckpt", infer_ckpt, "Model checkpoint (model.owck)")->required();
  infer->add_option("--data", infer_data, "Dataset directory")->required();
  infer->add_option("--out", infer_out, "Output directory for frames and captions")
      ->required();
  infer->add_option("--video", infer_video,
                    "Video id to render (default: first eval video)");
  add_config_options(infer, infer_cfg);

  bool inject_fault = false;
  CLI::App* verify = app.add_subcommand(
      "verify", "Run the numeric oracle suite (gradients, assignment, attention "
                "masking, metrics)");
  verify->add_flag("--inject-fault", inject_fault,
                   "Feed the checker a deliberately wrong gradient (negative "
                   "control; verification must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      Config cfg;
      apply_overrides(cfg, gen_cfg);
      cmd_generate(cfg, gen_out);
    } else if (train->parsed()) {
      Config cfg;
      apply_overrides(cfg, train_cfg);
      cmd_train(cfg, train_data, train_out, train_flags);
    } else if (eval->parsed()) {
      cmd_eval(eval_ckpt, eval_data, eval_out, eval_cfg, eval_oracle);
    } else if (infer->parsed()) {
      cmd_infer(infer_ckpt, infer_data, infer_out, infer_video, infer_cfg);
    } else if (verify->parsed()) {
      cmd_verify(inject_fault);
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const VerifyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
