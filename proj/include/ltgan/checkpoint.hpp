#pragma once

// Binary checkpoints. Layout (all integers little-endian):
//
//   "LTG1"                       magic
//   u32 version                  currently 1
//   u32 block count
//   block headers (manifest):
//     str name                   u32 byte length + UTF-8 bytes
//     u8  kind                   0 = network, 1 = tensor group
//     u8  hidden, u8 output      activations, networks only
//     u32 tensor count
//     per tensor: str name, u32 rank, rank x u64 extents
//   payload: every tensor's values as f64, in manifest order
//   optional trailing section starting with its own 4-byte magic
//
// docs/checkpoint-format.md has the full description including the engine section.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltgan/nn.hpp"

namespace ltgan {

inline constexpr std::array<char, 4> kCheckpointMagic{'L', 'T', 'G', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }
  std::vector<unsigned char>& bytes() noexcept { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

/// Cursor over a byte buffer; running out of bytes names the section being read.
class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  void section(std::string name) { section_ = std::move(name); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::span<const unsigned char> take(std::size_t n) {
    if (remaining() < n) {
      throw CheckpointError("checkpoint truncated: missing section '" + section_ + "' (need " + std::to_string(n) + " bytes at offset " +
                            std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    auto b = take(n);
    return std::string(b.begin(), b.end());
  }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
  std::string section_ = "header";
};

enum class BlockKind : std::uint8_t { network = 0, tensor_group = 1 };

/// Non-owning view of one block to write.
struct BlockRef {
  std::string name;
  BlockKind kind = BlockKind::network;
  Activation hidden = Activation::identity;
  Activation output = Activation::identity;
  std::vector<const Tensor*> tensors;
  std::vector<std::string> tensor_names;
};

inline BlockRef block_of(const Mlp& net) {
  BlockRef b{net.name(), BlockKind::network, net.spec().hidden, net.spec().output, {}, {}};
  for (const auto& e : net.params()) {
    b.tensors.push_back(&e.value);
    b.tensor_names.push_back(e.name);
  }
  return b;
}

struct Block {
  std::string name;
  BlockKind kind = BlockKind::network;
  Activation hidden = Activation::identity;
  Activation output = Activation::identity;
  std::vector<ParamSet::Entry> tensors;

  /// Rebuilds the network; widths come from the weight shapes.
  Mlp to_mlp() const {
    if (kind != BlockKind::network) throw CheckpointError("checkpoint: block '" + name + "' is not a network");
    if (tensors.size() < 2 || tensors.size() % 2 != 0) throw CheckpointError("checkpoint: network '" + name + "' has odd tensor count");
    MlpSpec spec{{}, hidden, output};
    for (std::size_t l = 0; l < tensors.size(); l += 2) {
      const Shape& w = tensors[l].value.shape();
      if (w.size() != 2) throw CheckpointError("checkpoint: network '" + name + "' weight is not rank 2");
      if (l == 0) spec.widths.push_back(w[0]);
      spec.widths.push_back(w[1]);
    }
    ParamSet params(name);
    for (const auto& t : tensors) params.add(t.name, t.value);
    return Mlp(spec, std::move(params));
  }
};

struct CheckpointFile {
  std::vector<Block> blocks;
  std::vector<unsigned char> trailer;  // optional extension section, verbatim

  const Block& block(const std::string& name) const {
    for (const auto& b : blocks) {
      if (b.name == name) return b;
    }
    throw CheckpointError("checkpoint: no block named '" + name + "'");
  }
};

inline std::vector<unsigned char> encode_checkpoint(std::span<const BlockRef> blocks, std::span<const unsigned char> trailer = {}) {
  ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    w.str(b.name);
    w.u8(static_cast<std::uint8_t>(b.kind));
    if (b.kind == BlockKind::network) {
      w.u8(static_cast<std::uint8_t>(b.hidden));
      w.u8(static_cast<std::uint8_t>(b.output));
    }
    w.u32(static_cast<std::uint32_t>(b.tensors.size()));
    for (std::size_t i = 0; i < b.tensors.size(); ++i) {
      w.str(b.tensor_names[i]);
      w.u32(static_cast<std::uint32_t>(b.tensors[i]->rank()));
      for (std::size_t d : b.tensors[i]->shape()) w.u64(d);
    }
  }
  for (const auto& b : blocks)
    for (const Tensor* t : b.tensors)
      for (double v : t->data()) w.f64(v);
  w.raw(trailer.data(), trailer.size());
  return std::move(w.bytes());
}

inline CheckpointFile decode_checkpoint(std::span<const unsigned char> bytes) {
  ByteReader r(bytes);
  r.section("magic");
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin())) {
    throw CheckpointError("checkpoint: wrong magic bytes (expected 'LTG1')");
  }
  r.section("manifest");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t n_blocks = r.u32();
  CheckpointFile file;
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    Block b;
    b.name = r.str();
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw CheckpointError("checkpoint: block '" + b.name + "' has unknown kind " + std::to_string(kind));
    b.kind = static_cast<BlockKind>(kind);
    if (b.kind == BlockKind::network) {
      const std::uint8_t h = r.u8(), o = r.u8();
      if (h > 3 || o > 3) throw CheckpointError("checkpoint: block '" + b.name + "' has unknown activation");
      b.hidden = static_cast<Activation>(h);
      b.output = static_cast<Activation>(o);
    }
    const std::uint32_t n_tensors = r.u32();
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
      std::string name = r.str();
      const std::uint32_t rank = r.u32();
      Shape shape;
      for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u64());
      if (shape_size(shape) > bytes.size()) throw CheckpointError("checkpoint: tensor '" + b.name + "." + name + "' is implausibly large");
      b.tensors.push_back({std::move(name), Tensor(shape)});
    }
    file.blocks.push_back(std::move(b));
  }
  for (auto& b : file.blocks) {
    r.section("payload '" + b.name + "'");
    for (auto& t : b.tensors)
      for (double& v : t.value.data()) v = r.f64();
  }
  auto rest = r.take(r.remaining());
  file.trailer.assign(rest.begin(), rest.end());
  return file;
}

inline void write_bytes(const std::string& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::ios_base::failure("write to '" + path + "' failed");
}

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Networks only, no trailer.
inline void save_networks(const std::string& path, std::span<const Mlp* const> nets) {
  std::vector<BlockRef> blocks;
  for (const Mlp* n : nets) blocks.push_back(block_of(*n));
  write_bytes(path, encode_checkpoint(blocks));
}

inline std::vector<Mlp> load_networks(const std::string& path) {
  const auto file = decode_checkpoint(read_bytes(path));
  std::vector<Mlp> out;
  for (const auto& b : file.blocks) {
    if (b.kind == BlockKind::network) out.push_back(b.to_mlp());
  }
  return out;
}

}  // namespace ltgan
