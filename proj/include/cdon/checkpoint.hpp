#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdon/config.hpp"
#include "cdon/network.hpp"
#include "cdon/heads.hpp"

namespace cdon {

enum class DType : std::uint8_t { f64 = 0, f32 = 1, u8 = 2, u64 = 3, i64 = 4 };

std::size_t dtype_size(DType t);

/// One named record: dims plus the raw little-endian payload.
struct Record {
  std::string name;
  DType dtype = DType::f64;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t elements() const;
  bool operator==(const Record&) const = default;

  static Record from_tensor(const std::string& name, const Tensor4& t);
  static Record from_text(const std::string& name, const std::string& text);
  static Record from_u64(const std::string& name, std::uint64_t v);
  /// Rank-4 f64 or f32 record as a tensor. Throws FormatError otherwise.
  Tensor4 to_tensor() const;
  std::string to_text() const;
  std::uint64_t to_u64() const;
};

/// "CDON" magic, u32 version, then records until end of file:
/// u32 name length, name bytes, u8 dtype, u8 rank, rank x u32 dims, payload.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  std::vector<Record> records;

  const Record* find(const std::string& name) const;
  const Record& at(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
/// Throws FormatError naming the byte offset on bad magic, unknown version,
/// unknown dtype or truncation.
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Training state packed into checkpoint records: "param/<name>",
/// "optim/velocity/<name>", "meta/step", "meta/config_hash", "meta/config".
Checkpoint make_checkpoint(Network& net, const OptimState& optim, const RunConfig& cfg, int step);

struct RestoredRun {
  RunConfig config;
  Network net;
  OptimState optim;
  int step = 0;
};

/// Rebuilds the network from the stored config and loads every parameter.
/// Throws FormatError when the stored hash disagrees with the stored config
/// or a parameter is missing or mis-shaped.
RestoredRun restore(const Checkpoint& ckpt);

}  // namespace cdon
