#include "topogan/checkpoint.hpp"

#include <limits>

#include "byte_io.hpp"
#include "topogan/error.hpp"

namespace topogan {

namespace {
constexpr std::string_view kMagic = "CRCG";
constexpr std::uint32_t kVersion = 1;
}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const TensorRecord& Checkpoint::at(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw FormatError("checkpoint has no tensor '" + name + "'", 0);
}

void Checkpoint::add(std::string name, std::vector<std::uint32_t> shape, std::vector<double> data) {
  tensors.push_back({std::move(name), std::move(shape), std::move(data)});
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.put_bytes(kMagic);
  w.put(kVersion);
  w.put(ckpt.step);
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw ParameterError("tensor name too long");
    if (t.shape.size() > 255) throw ParameterError("tensor rank too large");
    std::size_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.data.size()) throw ContractError("tensor '" + t.name + "' shape does not match its data");
    w.put(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put(d);
    for (double v : t.data) w.put(v);
  }
  w.put(static_cast<std::uint32_t>(ckpt.rng_state.size()));
  w.put_bytes(ckpt.rng_state);
  return w.bytes();
}

Checkpoint decode_checkpoint(std::string bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.remaining() < kMagic.size() || r.get_bytes(kMagic.size()) != kMagic) {
    throw FormatError("bad magic", 0);
  }
  const auto version_at = r.offset();
  if (r.get<std::uint32_t>() != kVersion) throw FormatError("unsupported version", version_at);
  Checkpoint ckpt;
  ckpt.step = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.get_bytes(r.get<std::uint16_t>());
    const auto ndim = r.get<std::uint8_t>();
    std::size_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      t.shape.push_back(r.get<std::uint32_t>());
      n *= t.shape.back();
    }
    if (n > r.remaining() / 8) throw FormatError("truncated file", r.offset() + r.remaining());
    t.data.resize(n);
    for (double& v : t.data) v = r.get<double>();
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.rng_state = r.get_bytes(r.get<std::uint32_t>());
  if (!r.at_end()) throw FormatError("trailing bytes", r.offset());
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.put_bytes(encode_checkpoint(ckpt));
  w.save(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  return decode_checkpoint(r.get_bytes(r.remaining()));
}

}  // namespace topogan
