#include "owvis/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace owvis {
namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw DataError("truncated-file", "checkpoint cut short");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(buf[pos]) |
                 (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::string out;
  out += "OWCK";
  put_u32(out, 1);  // version
  const auto& items = model.params().items;
  put_u32(out, static_cast<uint32_t>(items.size()));
  for (const auto& p : items) {
    if (p->name().size() > 0xffff) throw Error("bad-checkpoint", "parameter name too long");
    put_u16(out, static_cast<uint16_t>(p->name().size()));
    out += p->name();
    out.push_back(static_cast<char>(p->shape().size()));
    for (int d : p->shape()) put_u32(out, static_cast<uint32_t>(d));
    for (double v : p->values()) {
      float f = static_cast<float>(v);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  std::string cfg_text = model.cfg().serialize();
  put_u32(out, static_cast<uint32_t>(cfg_text.size()));
  out += cfg_text;
  put_u32(out, static_cast<uint32_t>(model.vocab().size()));
  for (const std::string& tok : model.vocab().tokens()) {
    put_u16(out, static_cast<uint16_t>(tok.size()));
    out += tok;
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("missing-file", "cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("missing-file", "checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing-file", "cannot open checkpoint: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 4 || data.compare(0, 4, "OWCK") != 0)
    throw DataError("bad-magic", "not a checkpoint file: " + path);
  Reader r(data);
  r.pos = 4;
  if (r.u32() != 1) throw DataError("bad-version", "unsupported checkpoint version");

  struct Entry {
    Shape shape;
    std::vector<double> values;
  };
  std::vector<std::pair<std::string, Entry>> entries;
  uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u16());
    int rank = r.u8();
    Entry e;
    int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      e.shape.push_back(static_cast<int>(r.u32()));
      numel *= e.shape.back();
    }
    if (numel <= 0 || numel > (1 << 28)) throw DataError("bad-checkpoint", "bad tensor extents");
    e.values.resize(numel);
    for (int64_t k = 0; k < numel; ++k) e.values[k] = static_cast<double>(r.f32());
    entries.emplace_back(std::move(name), std::move(e));
  }

  Config cfg;
  try {
    cfg.apply_text(r.bytes(r.u32()));
    cfg.validate();
  } catch (const Error& e) {
    throw DataError("bad-checkpoint", std::string("stored config: ") + e.what());
  }
  uint32_t vocab_count = r.u32();
  std::vector<std::string> tokens;
  for (uint32_t i = 0; i < vocab_count; ++i) tokens.push_back(r.bytes(r.u16()));
  Vocabulary vocab;
  try {
    vocab = Vocabulary::from_tokens(tokens);
  } catch (const Error& e) {
    throw DataError("bad-checkpoint", std::string("stored vocabulary: ") + e.what());
  }

  set_precision(cfg.precision == "f64" ? Precision::f64 : Precision::f32);
  Model model(cfg, vocab);
  if (entries.size() != model.params().items.size())
    throw DataError("bad-checkpoint", "tensor count does not match the architecture");
  for (const auto& [name, e] : entries) {
    ParamPtr p = model.params().find(name);
    if (!p) throw DataError("bad-checkpoint", "unknown tensor: " + name);
    if (p->shape() != e.shape) throw DataError("bad-checkpoint", "shape mismatch: " + name);
    p->values() = e.values;
    apply_precision(p->values());
  }
  return model;
}

}  // namespace owvis
