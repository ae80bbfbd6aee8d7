#include "convnorm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace convnorm {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> data, std::string source)
      : buf_(std::move(data)), source_(std::move(source)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4))); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint " + source_ + ": " + what + " at offset " +
                             std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::vector<std::uint8_t> buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const std::vector<std::uint32_t>& extents,
                  std::span<const float> values) {
  if (name.size() > UINT16_MAX) throw std::runtime_error("checkpoint: name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(extents.size()));
  for (auto e : extents) w.u32(e);
  for (float v : values) w.f32(v);
}

}  // namespace

void save_checkpoint(AllCnn& model, const std::filesystem::path& path) {
  const ClassifierConfig& cfg = model.config();
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(cfg.norm));
  w.f64(cfg.width_scale);
  w.u32(static_cast<std::uint32_t>(cfg.in_c));
  w.u32(static_cast<std::uint32_t>(cfg.in_h));
  w.u32(static_cast<std::uint32_t>(cfg.in_w));
  w.u32(static_cast<std::uint32_t>(cfg.n_classes));
  w.u8(static_cast<std::uint8_t>((cfg.affine ? 1 : 0) | (cfg.weighted_var ? 2 : 0)));

  const auto params = model.parameters();
  const auto buffers = model.buffers();
  w.u32(static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (const auto& p : params) {
    const Shape s = p.tensor.shape();
    write_tensor(w, p.name,
                 {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                  static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
                 p.tensor.values());
  }
  for (const auto& b : buffers) {
    write_tensor(w, b.name, {static_cast<std::uint32_t>(b.values->size())}, *b.values);
  }

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.data().data()),
              static_cast<std::streamsize>(w.data().size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

AllCnn load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  if (r.str(sizeof(kCheckpointMagic)) !=
      std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    r.fail("bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  ClassifierConfig cfg;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(NormKind::kLearned)) r.fail("bad norm kind");
  cfg.norm = static_cast<NormKind>(kind);
  cfg.width_scale = r.f64();
  cfg.in_c = r.u32();
  cfg.in_h = r.u32();
  cfg.in_w = r.u32();
  cfg.n_classes = r.u32();
  const std::uint8_t flags = r.u8();
  cfg.affine = (flags & 1) != 0;
  cfg.weighted_var = (flags & 2) != 0;
  cfg.jitter = 0.0;

  Rng rng(0);
  AllCnn model = AllCnn::build(cfg, rng);

  std::map<std::string, std::pair<std::vector<std::uint32_t>, std::vector<float>>> stored;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    std::vector<std::uint32_t> extents(rank);
    std::size_t numel = 1;
    for (auto& e : extents) {
      e = r.u32();
      numel *= e;
    }
    std::vector<float> values(numel);
    for (auto& v : values) v = r.f32();
    stored[name] = {std::move(extents), std::move(values)};
  }
  if (!r.done()) r.fail("trailing bytes");

  auto take = [&](const std::string& name, std::size_t numel) -> std::vector<float>& {
    auto it = stored.find(name);
    if (it == stored.end()) throw std::runtime_error("checkpoint " + path.string() + ": missing tensor " + name);
    if (it->second.second.size() != numel) {
      throw std::runtime_error("checkpoint " + path.string() + ": tensor " + name +
                               " has the wrong size");
    }
    return it->second.second;
  };
  for (auto& p : model.parameters()) {
    const auto& v = take(p.name, p.tensor.numel());
    std::copy(v.begin(), v.end(), p.tensor.mutable_values().begin());
  }
  for (auto& b : model.buffers()) {
    const auto& v = take(b.name, b.values->size());
    std::copy(v.begin(), v.end(), b.values->begin());
  }
  return model;
}

}  // namespace convnorm
