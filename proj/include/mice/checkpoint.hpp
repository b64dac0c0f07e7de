#pragma once

// Binary weight checkpoints.
//
// Layout (all integers little-endian):
//   "MICEWTS1"
//   u32 kind (0 cross-encoder, 1 mid-fusion)
//   u32 config field count, then that many u32 config values
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, rank × u32 dims,
//     product(dims) × f32 row-major payload

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mice/binary_io.hpp"
#include "mice/transformer.hpp"

namespace mice {

inline constexpr char kCheckpointMagic[] = "MICEWTS1";

enum class ModelKind : std::uint32_t { CrossEncoder = 0, Mice = 1 };

struct CheckpointData {
  ModelKind kind = ModelKind::CrossEncoder;
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& get(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointData& ckpt);
CheckpointData parse_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& ckpt);
/// Reads and parses; `fingerprint`, when given, receives the SHA-256 of the file bytes.
CheckpointData read_checkpoint(const std::filesystem::path& path, Fingerprint* fingerprint = nullptr);

template <typename T>
CheckpointData to_checkpoint(const Weights<T>& w);
/// Throws FormatError for a mid-fusion checkpoint or a missing/misshaped tensor.
template <typename T>
Weights<T> weights_from_checkpoint(const CheckpointData& ckpt);

/// SHA-256 of the serialized checkpoint; equals the digest of the file it would be written to.
template <typename T>
Fingerprint fingerprint_of(const Weights<T>& w) {
  return io::sha256(serialize_checkpoint(to_checkpoint(w)));
}

}  // namespace mice
