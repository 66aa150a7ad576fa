#include "mhcnn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>

namespace mhcnn::runtime {
namespace {

constexpr char kMagic[4] = {'M', 'H', 'C', 'K'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_tensor(Writer& w, const std::string& name, const Tensor<float>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (const std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (const float v : t.data()) w.f32(v);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const nn::Model<float>& model, const RunConfig& config) {
  if (config.model != model.config()) throw CheckpointError("checkpoint: config does not describe this model");
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(to_json(config));
  w.u32(static_cast<std::uint32_t>(model.parameters().size() + model.buffers().size()));
  for (const auto& [name, t] : model.parameters()) write_tensor(w, name, t);
  for (const auto& [name, t] : model.buffers()) write_tensor(w, name, t);
  w.u32(crc32_of(w.data()));
  return std::move(w.data());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw CheckpointError("checkpoint: truncated while reading magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic, not an MHCK file");
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));

  // Structure first, so a short file reports truncation rather than a bad sum.
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };
  const std::string config_text = r.str("config");
  const std::uint32_t count = r.u32("tensor count");
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(r.u32("tensor dims"));
      n *= e.shape.back();
      r.need(4 * n, "tensor payload");
    }
    e.values.resize(n);
    for (float& v : e.values) v = r.f32("tensor payload");
    entries.push_back(std::move(e));
  }
  if (r.remaining() < 4) throw CheckpointError("checkpoint: truncated while reading checksum");
  if (r.remaining() > 4) throw CheckpointError("checkpoint: trailing bytes after checksum");
  const std::uint32_t stored = r.u32("checksum");
  if (crc32_of(bytes.first(bytes.size() - 4)) != stored)
    throw CheckpointError("checkpoint: checksum mismatch, file is corrupt");

  RunConfig config;
  try {
    config = parse_config(config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: embedded config invalid: ") + e.what());
  }
  Checkpoint ck{config, nn::Model<float>(config.model)};
  auto& params = ck.model.parameters();
  auto& buffers = ck.model.buffers();
  if (entries.size() != params.size() + buffers.size())
    throw CheckpointError("checkpoint: tensor count " + std::to_string(entries.size()) +
                          " does not match the model (" + std::to_string(params.size() + buffers.size()) + ")");
  std::set<std::string> seen;
  for (auto& e : entries) {
    Tensor<float>* target = nullptr;
    if (auto it = params.find(e.name); it != params.end()) target = &it->second;
    if (auto it = buffers.find(e.name); it != buffers.end()) target = &it->second;
    if (target == nullptr) throw CheckpointError("checkpoint: unexpected tensor " + e.name);
    if (!seen.insert(e.name).second) throw CheckpointError("checkpoint: duplicate tensor " + e.name);
    if (e.shape != target->shape())
      throw CheckpointError("checkpoint: shape " + to_string(e.shape) + " for " + e.name +
                            " does not match the model " + to_string(target->shape()));
    *target = Tensor<float>(std::move(e.shape), std::move(e.values));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const nn::Model<float>& model, const RunConfig& config) {
  const auto bytes = serialize_checkpoint(model, config);
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace mhcnn::runtime
