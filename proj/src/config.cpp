#include "owvis/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace owvis {
namespace {

struct Field {
  const char* name;
  enum Kind { Int, Double, Bool, String, U64 } kind;
  void* ptr;
};

std::vector<Field> fields(Config& c) {
  return {
      {"assoc_gate", Field::Double, &c.assoc_gate},
      {"batch_size", Field::Int, &c.batch_size},
      {"caption_present_prob", Field::Double, &c.caption_present_prob},
      {"clip_len", Field::Int, &c.clip_len},
      {"cont_normalize", Field::Bool, &c.cont_normalize},
      {"cont_scope", Field::String, &c.cont_scope},
      {"decoder_layers", Field::Int, &c.decoder_layers},
      {"decoder_mode", Field::String, &c.decoder_mode},
      {"dup_iou", Field::Double, &c.dup_iou},
      {"eval_videos", Field::Int, &c.eval_videos},
      {"grad_clip", Field::Double, &c.grad_clip},
      {"heldout", Field::String, &c.heldout},
      {"lambda_bce", Field::Double, &c.lambda_bce},
      {"lambda_cap", Field::Double, &c.lambda_cap},
      {"lambda_cls", Field::Double, &c.lambda_cls},
      {"lambda_cont", Field::Double, &c.lambda_cont},
      {"lambda_cw", Field::Double, &c.lambda_cw},
      {"lambda_dice", Field::Double, &c.lambda_dice},
      {"lambda_ow", Field::Double, &c.lambda_ow},
      {"lr", Field::Double, &c.lr},
      {"max_age", Field::Int, &c.max_age},
      {"max_caption_len", Field::Int, &c.max_caption_len},
      {"max_objects", Field::Int, &c.max_objects},
      {"max_speed", Field::Int, &c.max_speed},
      {"model_dim", Field::Int, &c.model_dim},
      {"n_cw_queries", Field::Int, &c.n_cw_queries},
      {"n_text", Field::Int, &c.n_text},
      {"num_classes", Field::Int, &c.num_classes},
      {"o2t_layers", Field::Int, &c.o2t_layers},
      {"occlusion_prob", Field::Double, &c.occlusion_prob},
      {"ow_fourier_scale", Field::Double, &c.ow_fourier_scale},
      {"ow_grid", Field::Int, &c.ow_grid},
      {"precision", Field::String, &c.precision},
      {"seed", Field::U64, &c.seed},
      {"tau_cw", Field::Double, &c.tau_cw},
      {"tau_ow", Field::Double, &c.tau_ow},
      {"train_steps", Field::Int, &c.train_steps},
      {"train_videos", Field::Int, &c.train_videos},
      {"use_caption_mask", Field::Bool, &c.use_caption_mask},
      {"use_contrastive", Field::Bool, &c.use_contrastive},
      {"use_open_queries", Field::Bool, &c.use_open_queries},
      {"video_frames", Field::Int, &c.video_frames},
      {"weight_decay", Field::Double, &c.weight_decay},
      {"world_size", Field::Int, &c.world_size},
  };
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw UsageError("bad-config-value", "cannot parse value for " + key + ": '" + value + "'");
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields(*this)) {
    if (key != f.name) continue;
    try {
      size_t used = 0;
      switch (f.kind) {
        case Field::Int: {
          int v = std::stoi(value, &used);
          if (used != value.size()) bad_value(key, value);
          *static_cast<int*>(f.ptr) = v;
          return;
        }
        case Field::Double: {
          double v = std::stod(value, &used);
          if (used != value.size()) bad_value(key, value);
          *static_cast<double*>(f.ptr) = v;
          return;
        }
        case Field::U64: {
          unsigned long long v = std::stoull(value, &used);
          if (used != value.size()) bad_value(key, value);
          *static_cast<uint64_t*>(f.ptr) = v;
          return;
        }
        case Field::Bool: {
          if (value == "true" || value == "1")
            *static_cast<bool*>(f.ptr) = true;
          else if (value == "false" || value == "0")
            *static_cast<bool*>(f.ptr) = false;
          else
            bad_value(key, value);
          return;
        }
        case Field::String:
          *static_cast<std::string*>(f.ptr) = value;
          return;
      }
    } catch (const std::invalid_argument&) {
      bad_value(key, value);
    } catch (const std::out_of_range&) {
      bad_value(key, value);
    }
  }
  throw UsageError("unknown-config-key", "no such config key: " + key);
}

void Config::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("bad-config-value", "expected key=value, got: " + line);
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void Config::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing-file", "cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  apply_text(text);
}

std::string Config::serialize() const {
  Config copy = *this;
  std::ostringstream out;
  out.precision(17);
  for (const Field& f : fields(copy)) {
    out << f.name << " = ";
    switch (f.kind) {
      case Field::Int: out << *static_cast<int*>(f.ptr); break;
      case Field::Double: out << *static_cast<double*>(f.ptr); break;
      case Field::U64: out << *static_cast<uint64_t*>(f.ptr); break;
      case Field::Bool: out << (*static_cast<bool*>(f.ptr) ? "true" : "false"); break;
      case Field::String: out << *static_cast<std::string*>(f.ptr); break;
    }
    out << "\n";
  }
  return out.str();
}

std::vector<std::string> Config::heldout_names() const {
  std::vector<std::string> names;
  std::istringstream in(heldout);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (!part.empty()) names.push_back(part);
  }
  return names;
}

void Config::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("bad-config-value", what);
  };
  require(model_dim > 0 && model_dim % 2 == 0, "model_dim must be positive and even");
  require(decoder_layers >= 1, "decoder_layers must be at least 1");
  require(n_cw_queries >= 1, "n_cw_queries must be at least 1");
  require(ow_grid >= 1, "ow_grid must be at least 1");
  require(ow_fourier_scale > 0, "ow_fourier_scale must be positive");
  require(clip_len >= 1, "clip_len must be at least 1");
  require(n_text >= 1, "n_text must be at least 1");
  require(o2t_layers >= 1, "o2t_layers must be at least 1");
  require(decoder_mode == "trainable" || decoder_mode == "frozen-random",
          "decoder_mode must be trainable or frozen-random");
  require(max_caption_len >= 2, "max_caption_len must be at least 2");
  require(num_classes >= 1, "num_classes must be at least 1");
  require(cont_scope == "foreground" || cont_scope == "all",
          "cont_scope must be foreground or all");
  require(lr > 0, "lr must be positive");
  require(weight_decay >= 0, "weight_decay must be nonnegative");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(train_steps >= 0, "train_steps must be nonnegative");
  require(precision == "f32" || precision == "f64", "precision must be f32 or f64");
  require(grad_clip >= 0, "grad_clip must be nonnegative");
  require(tau_cw >= 0 && tau_cw <= 1, "tau_cw must be in [0,1]");
  require(tau_ow >= 0 && tau_ow <= 1, "tau_ow must be in [0,1]");
  require(dup_iou >= 0 && dup_iou <= 1, "dup_iou must be in [0,1]");
  require(assoc_gate >= 0, "assoc_gate must be nonnegative");
  require(max_age >= 0, "max_age must be nonnegative");
  require(world_size >= 16 && world_size % 4 == 0,
          "world_size must be at least 16 and divisible by 4");
  require(video_frames >= 1, "video_frames must be at least 1");
  require(max_objects >= 1, "max_objects must be at least 1");
  require(max_speed >= 0, "max_speed must be nonnegative");
  require(occlusion_prob >= 0 && occlusion_prob <= 1, "occlusion_prob must be in [0,1]");
  require(caption_present_prob >= 0 && caption_present_prob <= 1,
          "caption_present_prob must be in [0,1]");
  require(train_videos >= 1, "train_videos must be at least 1");
  require(eval_videos >= 1, "eval_videos must be at least 1");
  require(clip_len <= video_frames, "clip_len cannot exceed video_frames");
}

}  // namespace owvis
