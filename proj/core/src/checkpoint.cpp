#include "flexfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "flexfuse/keyvalue.hpp"

namespace flexfuse {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    const auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    const auto b = take(n);
    return {b.begin(), b.end()};
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (in_.size() - pos_ < n)
      throw CheckpointError(CheckpointErrc::truncated,
                            "checkpoint truncated at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

KeyValues config_block(const Checkpoint& c) {
  return {
      {"p", std::to_string(c.arch.patch)},
      {"d", std::to_string(c.arch.dim)},
      {"c", std::to_string(c.arch.channels)},
      {"depth", std::to_string(c.arch.depth)},
      {"E", std::to_string(c.arch.inner)},
      {"N_state", std::to_string(c.arch.state)},
      {"conv", std::to_string(c.arch.conv_width)},
      {"T", std::to_string(c.diffusion_steps)},
      {"schedule", std::string(to_string(c.schedule))},
  };
}

std::string describe(const DfmConfig& a) {
  return "p=" + std::to_string(a.patch) + " d=" + std::to_string(a.dim) + " c=" + std::to_string(a.channels) +
         " depth=" + std::to_string(a.depth) + " E=" + std::to_string(a.inner) +
         " N_state=" + std::to_string(a.state);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  if (!(ckpt.params.config == ckpt.arch))
    throw InvalidArgument("checkpoint parameters do not match the declared architecture");
  Writer w;
  w.bytes(std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)));
  w.u32(kCheckpointVersion);
  const std::string cfg = format_key_values(config_block(ckpt));
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);

  std::uint32_t count = 0;
  ckpt.params.for_each([&](const std::string&, const Tensor<float>&) { ++count; });
  w.u32(count);
  ckpt.params.for_each([&](const std::string& name, const Tensor<float>& t) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.storage()) w.f32(v);
  });
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError(CheckpointErrc::bad_magic, "not a .ffz checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointErrc::version_skew, "checkpoint version " + std::to_string(version) +
                                                            " unsupported (expected " +
                                                            std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t cfg_len = r.u32();
  Checkpoint ckpt;
  try {
    const KeyValues kv = parse_key_values(r.str(cfg_len));
    ckpt.arch.patch = require_size(kv, "p");
    ckpt.arch.dim = require_size(kv, "d");
    ckpt.arch.channels = require_size(kv, "c");
    ckpt.arch.depth = require_size(kv, "depth");
    ckpt.arch.inner = require_size(kv, "E");
    ckpt.arch.state = require_size(kv, "N_state");
    ckpt.arch.conv_width = kv.contains("conv") ? require_size(kv, "conv") : 4;
    ckpt.diffusion_steps = require_size(kv, "T");
    ckpt.schedule = parse_schedule_kind(require_value(kv, "schedule"));
    ckpt.arch.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw CheckpointError(CheckpointErrc::config_mismatch, std::string("bad checkpoint config: ") + e.what());
  }

  ckpt.params = DfmParams<float>::zeros(ckpt.arch);
  std::map<std::string, Tensor<float>*> slots;
  ckpt.params.for_each([&](const std::string& name, Tensor<float>& t) { slots[name] = &t; });

  const std::uint32_t count = r.u32();
  std::map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u16());
    const std::size_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const auto it = slots.find(name);
    if (it == slots.end())
      throw CheckpointError(CheckpointErrc::unknown_tensor, "checkpoint tensor '" + name + "' has no slot");
    if (seen[name]) throw CheckpointError(CheckpointErrc::unknown_tensor, "duplicate tensor '" + name + "'");
    seen[name] = true;
    Tensor<float>& slot = *it->second;
    if (slot.shape() != shape)
      throw CheckpointError(CheckpointErrc::shape_mismatch, "tensor '" + name + "' has shape " +
                                                                shape_string(shape) + ", expected " +
                                                                shape_string(slot.shape()));
    for (auto& v : slot.storage()) v = r.f32();
  }
  if (seen.size() != slots.size())
    throw CheckpointError(CheckpointErrc::shape_mismatch,
                          "checkpoint holds " + std::to_string(seen.size()) + " tensors, architecture needs " +
                              std::to_string(slots.size()));
  if (!r.at_end()) throw CheckpointError(CheckpointErrc::shape_mismatch, "trailing bytes after tensor table");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrc::io, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::io, "cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const DfmConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.arch == expected))
    throw CheckpointError(CheckpointErrc::config_mismatch, "checkpoint architecture (" + describe(ckpt.arch) +
                                                               ") differs from requested (" +
                                                               describe(expected) + ")");
  return ckpt;
}

}  // namespace flexfuse
