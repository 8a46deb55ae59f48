#pragma once

// CRCG checkpoint container (little-endian):
//   "CRCG" | u32 version=1 | u64 step | u32 tensor count
//   per tensor: u16 name length | name | u8 ndim | u32 dims... | f64 data
//   then u32 rng blob length | rng blob

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace topogan {

struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<double> data;
  bool operator==(const TensorRecord&) const = default;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<TensorRecord> tensors;
  std::string rng_state;

  /// Throws FormatError naming the tensor when it is absent.
  const TensorRecord& at(const std::string& name) const;
  const TensorRecord* find(const std::string& name) const;
  void add(std::string name, std::vector<std::uint32_t> shape, std::vector<double> data);
  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace topogan
