#include "owvis/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace owvis {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  explicit ByteReader(const std::string& b) : buf(b) {}
  uint32_t u32() {
    if (pos + 4 > buf.size()) throw DataError("truncated-file", "unexpected end of file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing-file", "cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("missing-file", "cannot write: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("missing-file", "write failed: " + path);
}

json load_json(const std::string& path) {
  std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("bad-json", path + ": " + e.what());
  }
}

json spec_to_json(const WorldSpec& s) {
  return json{{"frame_size", s.frame_size},
              {"num_frames", s.num_frames},
              {"shape_classes", s.shape_classes},
              {"colors", s.colors},
              {"max_objects", s.max_objects},
              {"max_speed", s.max_speed},
              {"occlusion_prob", s.occlusion_prob},
              {"caption_present_prob", s.caption_present_prob},
              {"seed", s.seed}};
}

WorldSpec spec_from_json(const json& j) {
  WorldSpec s;
  try {
    s.frame_size = j.at("frame_size").get<int>();
    s.num_frames = j.at("num_frames").get<int>();
    s.shape_classes = j.at("shape_classes").get<std::vector<std::string>>();
    s.colors = j.at("colors").get<std::vector<std::string>>();
    s.max_objects = j.at("max_objects").get<int>();
    s.max_speed = j.at("max_speed").get<int>();
    s.occlusion_prob = j.at("occlusion_prob").get<double>();
    s.caption_present_prob = j.at("caption_present_prob").get<double>();
    s.seed = j.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw DataError("bad-json", std::string("world block: ") + e.what());
  }
  return s;
}

json annos_to_json(const VideoSample& v) {
  json frames = json::array();
  for (int t = 0; t < v.t; ++t) {
    json objs = json::array();
    for (const FrameObject& o : v.gt[t]) {
      objs.push_back(json{{"track", o.track_id},
                          {"class", o.class_id},
                          {"rle", rle_encode(o.mask)},
                          {"box", {o.box.cx, o.box.cy, o.box.w, o.box.h}},
                          {"caption", o.caption},
                          {"caption_present", o.caption_present}});
    }
    frames.push_back(json{{"frame", t}, {"objects", std::move(objs)}});
  }
  return json{{"frames", std::move(frames)}};
}

void annos_from_json(const json& j, VideoSample& v) {
  try {
    const json& frames = j.at("frames");
    if (static_cast<int>(frames.size()) != v.t)
      throw DataError("bad-json", "frame count mismatch between frames and ground truth");
    v.gt.assign(v.t, {});
    for (int t = 0; t < v.t; ++t) {
      for (const json& jo : frames.at(t).at("objects")) {
        FrameObject o;
        o.track_id = jo.at("track").get<int>();
        o.class_id = jo.at("class").get<int>();
        o.mask = rle_decode(jo.at("rle").get<std::vector<int>>(), v.h, v.w);
        auto box = jo.at("box").get<std::vector<double>>();
        if (box.size() != 4) throw DataError("bad-json", "box must have 4 entries");
        o.box = {box[0], box[1], box[2], box[3]};
        o.caption = jo.at("caption").get<std::vector<std::string>>();
        o.caption_present = jo.at("caption_present").get<bool>();
        v.gt[t].push_back(std::move(o));
      }
    }
  } catch (const json::exception& e) {
    throw DataError("bad-json", std::string("ground truth: ") + e.what());
  }
}

}  // namespace

std::vector<int> Dataset::heldout_ids() const {
  std::vector<int> ids;
  for (const std::string& name : heldout) {
    auto it = std::find(world.shape_classes.begin(), world.shape_classes.end(), name);
    if (it == world.shape_classes.end())
      throw DataError("bad-config", "held-out class not in shape list: " + name);
    ids.push_back(static_cast<int>(it - world.shape_classes.begin()));
  }
  return ids;
}

std::vector<int> Dataset::common_ids() const {
  auto held = heldout_ids();
  std::vector<int> ids;
  for (int c = 0; c < static_cast<int>(world.shape_classes.size()); ++c)
    if (std::find(held.begin(), held.end(), c) == held.end()) ids.push_back(c);
  return ids;
}

const DatasetVideo& Dataset::video(const std::string& id) const {
  for (const auto& v : videos)
    if (v.id == id) return v;
  throw DataError("missing-video", "no such video: " + id);
}

Dataset generate_dataset(const WorldSpec& spec, const GenerateOptions& opts) {
  Dataset ds;
  ds.world = spec;
  ds.heldout = opts.heldout;
  ds.vocab = Vocabulary::standard();

  auto common = ds.common_ids();
  auto held = ds.heldout_ids();
  if (common.empty()) throw Error("bad-config", "every class is held out");
  std::vector<int> all_ids;
  for (int c = 0; c < static_cast<int>(spec.shape_classes.size()); ++c) all_ids.push_back(c);

  auto shows_any = [](const VideoSample& v, const std::vector<int>& ids) {
    for (const auto& frame : v.gt)
      for (const auto& o : frame)
        if (std::find(ids.begin(), ids.end(), o.class_id) != ids.end()) return true;
    return ids.empty();
  };

  char name[16];
  int index = 0;
  for (int i = 0; i < opts.train_videos; ++i, ++index) {
    std::snprintf(name, sizeof(name), "v%04d", index);
    uint64_t seed = Rng::mix(spec.seed, static_cast<uint64_t>(index) + 1);
    ds.videos.push_back({name, "train", generate_video(spec, common, {}, seed)});
  }
  Rng pick(Rng::mix(spec.seed, 0x9e1ul));
  for (int i = 0; i < opts.eval_videos; ++i, ++index) {
    std::snprintf(name, sizeof(name), "v%04d", index);
    std::vector<int> required;
    if (!held.empty()) {
      required.push_back(held[pick.uniform_int(0, static_cast<int>(held.size()) - 1)]);
      required.push_back(common[pick.uniform_int(0, static_cast<int>(common.size()) - 1)]);
    }
    // Objects can exit the frame or sit fully behind others, so resample
    // until the held-out and common classes both really appear on screen.
    bool placed = false;
    for (uint64_t attempt = 0; attempt < 1000 && !placed; ++attempt) {
      uint64_t seed = Rng::mix(spec.seed, Rng::mix(static_cast<uint64_t>(index) + 1, attempt));
      VideoSample v = generate_video(spec, all_ids, required, seed);
      if (shows_any(v, held) && shows_any(v, common)) {
        ds.videos.push_back({name, "eval", std::move(v)});
        placed = true;
      }
    }
    if (!placed)
      throw Error("bad-config", "could not realize an eval video with the class mixture");
  }
  return ds;
}

void write_frames(const std::string& path, const VideoSample& v) {
  std::string out;
  out.reserve(24 + v.frames.size() * 4);
  out += "OWVT";
  put_u32(out, 1);  // version
  put_u32(out, static_cast<uint32_t>(v.t));
  put_u32(out, static_cast<uint32_t>(v.h));
  put_u32(out, static_cast<uint32_t>(v.w));
  put_u32(out, 3);
  for (float f : v.frames) put_f32(out, f);
  write_file(path, out);
}

void read_frames(const std::string& path, VideoSample& v) {
  std::string data = read_file(path);
  if (data.size() < 4 || data.compare(0, 4, "OWVT") != 0)
    throw DataError("bad-magic", "not a frame tensor file: " + path);
  ByteReader r(data);
  r.pos = 4;
  uint32_t version = r.u32();
  if (version != 1) throw DataError("bad-version", "unsupported frame file version");
  v.t = static_cast<int>(r.u32());
  v.h = static_cast<int>(r.u32());
  v.w = static_cast<int>(r.u32());
  uint32_t ch = r.u32();
  if (ch != 3) throw DataError("bad-version", "expected 3 channels");
  size_t n = static_cast<size_t>(v.t) * v.h * v.w * 3;
  if (r.pos + n * 4 > data.size()) throw DataError("truncated-file", "frame data cut short");
  v.frames.resize(n);
  for (size_t i = 0; i < n; ++i) v.frames[i] = r.f32();
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  json videos = json::array();
  for (const auto& v : ds.videos) videos.push_back(json{{"id", v.id}, {"split", v.split}});
  json manifest{{"format_version", 1},
                {"world", spec_to_json(ds.world)},
                {"heldout", ds.heldout},
                {"vocab", ds.vocab.tokens()},
                {"videos", std::move(videos)}};
  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
  for (const auto& v : ds.videos) {
    fs::create_directories(dir + "/videos/" + v.id);
    write_frames(dir + "/videos/" + v.id + "/frames.owt", v.sample);
    write_file(dir + "/videos/" + v.id + "/annos.json", annos_to_json(v.sample).dump() + "\n");
  }
}

Dataset read_dataset(const std::string& dir) {
  json manifest = load_json(dir + "/manifest.json");
  Dataset ds;
  try {
    if (manifest.at("format_version").get<int>() != 1)
      throw DataError("bad-version", "unsupported manifest version");
    ds.world = spec_from_json(manifest.at("world"));
    ds.heldout = manifest.at("heldout").get<std::vector<std::string>>();
    ds.vocab = Vocabulary::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
    for (const json& jv : manifest.at("videos")) {
      DatasetVideo v;
      v.id = jv.at("id").get<std::string>();
      v.split = jv.at("split").get<std::string>();
      ds.videos.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw DataError("bad-json", std::string("manifest: ") + e.what());
  }
  for (auto& v : ds.videos) {
    read_frames(dir + "/videos/" + v.id + "/frames.owt", v.sample);
    annos_from_json(load_json(dir + "/videos/" + v.id + "/annos.json"), v.sample);
  }
  return ds;
}

}  // namespace owvis
