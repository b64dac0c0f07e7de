#pragma once

// On-disk store of precomputed document states.
//
// Layout (little-endian):
//   "MICEDOC1", u32 version, u32 d, u32 ell_star, 32-byte checkpoint digest,
//   u32 doc_count,
//   doc_count × (u32 id_len, id bytes, u32 m, u64 payload offset),
//   payload region: per document (m+1)×d f32, row-major.
// Offsets are absolute file positions, so a lookup is one seek.

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mice/mice_model.hpp"

namespace mice {

inline constexpr char kCacheMagic[] = "MICEDOC1";
inline constexpr std::uint32_t kCacheVersion = 1;

struct CacheHeader {
  std::uint32_t version = kCacheVersion;
  std::uint32_t d = 0;
  std::uint32_t ell_star = 0;
  Fingerprint checkpoint_hash{};
  std::uint32_t doc_count = 0;
};

struct CacheEntry {
  std::string doc_id;
  std::uint32_t m = 0;
  std::uint64_t offset = 0;
};

/// Serializes states (always as 32-bit floats). All states must share the
/// header's width and carry its checkpoint digest; duplicate ids are rejected.
template <typename T>
std::vector<std::uint8_t> serialize_cache(std::span<const DocState<T>> states, const CacheHeader& header);

/// Atomic write via temp file + rename.
template <typename T>
void write_cache(const std::filesystem::path& path, std::span<const DocState<T>> states,
                 const CacheHeader& header);

struct CacheCheck {
  /// When set, the stored digest must match.
  std::optional<Fingerprint> expected_hash;
  std::optional<std::uint32_t> expected_d;
  std::optional<std::uint32_t> expected_ell_star;
  /// Mismatches throw when strict, otherwise they are reported on stderr.
  bool strict = true;
};

/// Reads the header and offset table eagerly, payloads lazily.
class DocCacheReader {
 public:
  explicit DocCacheReader(const std::filesystem::path& path, const CacheCheck& check = {});

  const CacheHeader& header() const noexcept { return header_; }
  const std::vector<CacheEntry>& entries() const noexcept { return entries_; }
  bool contains(const std::string& doc_id) const { return index_.count(doc_id) != 0; }
  /// True when the reader was opened non-strict and some check failed.
  bool mismatch() const noexcept { return mismatch_; }

  /// Throws InputError for an unknown id. Safe to call concurrently.
  template <typename T>
  DocState<T> load(const std::string& doc_id) const;

 private:
  std::filesystem::path path_;
  CacheHeader header_;
  std::vector<CacheEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t file_size_ = 0;
  bool mismatch_ = false;
  mutable std::mutex mu_;
  mutable std::ifstream in_;
};

}  // namespace mice
