#include "mice/doccache.hpp"

#include <iostream>
#include <unordered_set>

#include "mice/binary_io.hpp"

namespace mice {

namespace {

constexpr std::size_t kFixedHeaderBytes = 8 + 4 + 4 + 4 + 32 + 4;

}  // namespace

template <typename T>
std::vector<std::uint8_t> serialize_cache(std::span<const DocState<T>> states,
                                          const CacheHeader& header) {
  if (header.d == 0) throw ConfigError("doc cache: hidden size must be positive");
  std::unordered_set<std::string> seen;
  std::size_t table_bytes = 0;
  for (const auto& s : states) {
    if (!seen.insert(s.doc_id).second) throw InputError("doc cache: duplicate doc id '" + s.doc_id + "'");
    if (s.states.rank() != 2 || s.states.cols() != header.d || s.states.rows() != s.m + 1) {
      throw DimensionError("doc cache: state '" + s.doc_id + "' has shape " +
                           shape_str(s.states.shape) + ", expected (m+1)x" + std::to_string(header.d));
    }
    if (s.checkpoint != header.checkpoint_hash) {
      throw ConsistencyError("doc cache: state '" + s.doc_id + "' was encoded with another checkpoint");
    }
    table_bytes += 4 + s.doc_id.size() + 4 + 8;
  }

  io::ByteWriter w;
  w.str(std::string_view(kCacheMagic, 8));
  w.u32(header.version);
  w.u32(header.d);
  w.u32(header.ell_star);
  w.bytes(header.checkpoint_hash);
  w.u32(static_cast<std::uint32_t>(states.size()));
  std::uint64_t offset = kFixedHeaderBytes + table_bytes;
  for (const auto& s : states) {
    w.u32(static_cast<std::uint32_t>(s.doc_id.size()));
    w.str(s.doc_id);
    w.u32(static_cast<std::uint32_t>(s.m));
    w.u64(offset);
    offset += s.states.numel() * 4;
  }
  for (const auto& s : states) {
    for (T v : s.states.data) w.f32(static_cast<float>(v));
  }
  return w.take();
}

template <typename T>
void write_cache(const std::filesystem::path& path, std::span<const DocState<T>> states,
                 const CacheHeader& header) {
  io::write_file_atomic(path, serialize_cache(states, header));
}

DocCacheReader::DocCacheReader(const std::filesystem::path& path, const CacheCheck& check)
    : path_(path) {
  in_.open(path, std::ios::binary);
  if (!in_) throw InputError("doc cache: cannot open " + path.string());
  in_.seekg(0, std::ios::end);
  file_size_ = static_cast<std::uint64_t>(in_.tellg());
  in_.seekg(0);

  std::vector<std::uint8_t> fixed(kFixedHeaderBytes);
  in_.read(reinterpret_cast<char*>(fixed.data()), static_cast<std::streamsize>(fixed.size()));
  if (static_cast<std::size_t>(in_.gcount()) != fixed.size()) throw FormatError("doc cache: truncated file");
  io::ByteReader r(fixed, "doc cache");
  if (r.str(8) != std::string_view(kCacheMagic, 8)) throw FormatError("doc cache: bad magic");
  header_.version = r.u32();
  if (header_.version != kCacheVersion) {
    throw FormatError("doc cache: unsupported version " + std::to_string(header_.version));
  }
  header_.d = r.u32();
  header_.ell_star = r.u32();
  auto hash = r.bytes(32);
  std::copy(hash.begin(), hash.end(), header_.checkpoint_hash.begin());
  header_.doc_count = r.u32();

  // The table is variable-length; read it incrementally from the stream.
  auto read_exact = [&](std::size_t n) {
    std::vector<std::uint8_t> buf(n);
    in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("doc cache: truncated file");
    return buf;
  };
  entries_.reserve(header_.doc_count);
  for (std::uint32_t i = 0; i < header_.doc_count; ++i) {
    auto len_bytes = read_exact(4);
    const std::uint32_t len = io::ByteReader(len_bytes, "doc cache").u32();
    if (len > file_size_) throw FormatError("doc cache: truncated file");
    auto rest = read_exact(len + 12);
    io::ByteReader er(rest, "doc cache");
    CacheEntry e;
    e.doc_id = er.str(len);
    e.m = er.u32();
    e.offset = er.u64();
    const std::uint64_t bytes = (std::uint64_t{e.m} + 1) * header_.d * 4;
    if (e.offset + bytes > file_size_) throw FormatError("doc cache: truncated file");
    if (!index_.emplace(e.doc_id, entries_.size()).second) {
      throw FormatError("doc cache: duplicate doc id '" + e.doc_id + "'");
    }
    entries_.push_back(std::move(e));
  }

  std::vector<std::string> problems;
  if (check.expected_hash && *check.expected_hash != header_.checkpoint_hash) {
    problems.push_back("checkpoint digest " + to_hex(header_.checkpoint_hash) +
                       " does not match model " + to_hex(*check.expected_hash));
  }
  if (check.expected_d && *check.expected_d != header_.d) {
    problems.push_back("hidden size " + std::to_string(header_.d) + " != model " +
                       std::to_string(*check.expected_d));
  }
  if (check.expected_ell_star && *check.expected_ell_star != header_.ell_star) {
    problems.push_back("ell_star " + std::to_string(header_.ell_star) + " != model " +
                       std::to_string(*check.expected_ell_star));
  }
  if (!problems.empty()) {
    mismatch_ = true;
    std::string msg = "doc cache " + path.string() + ":";
    for (const auto& p : problems) msg += " " + p + ";";
    if (check.strict) throw ConsistencyError(msg);
    std::cerr << "warning: " << msg << "\n";
  }
}

template <typename T>
DocState<T> DocCacheReader::load(const std::string& doc_id) const {
  auto it = index_.find(doc_id);
  if (it == index_.end()) throw InputError("doc cache: unknown doc id '" + doc_id + "'");
  const CacheEntry& e = entries_[it->second];
  const std::size_t count = (std::size_t{e.m} + 1) * header_.d;
  std::vector<std::uint8_t> raw(count * 4);
  {
    std::lock_guard lock(mu_);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(e.offset));
    in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in_.gcount()) != raw.size()) throw FormatError("doc cache: truncated file");
  }
  io::ByteReader r(raw, "doc cache");
  DocState<T> s;
  s.doc_id = e.doc_id;
  s.m = e.m;
  s.checkpoint = header_.checkpoint_hash;
  s.states = Tensor<T>({std::size_t{e.m} + 1, header_.d});
  for (auto& v : s.states.data) v = static_cast<T>(r.f32());
  return s;
}

template std::vector<std::uint8_t> serialize_cache(std::span<const DocState<float>>, const CacheHeader&);
template std::vector<std::uint8_t> serialize_cache(std::span<const DocState<double>>, const CacheHeader&);
template void write_cache(const std::filesystem::path&, std::span<const DocState<float>>, const CacheHeader&);
template void write_cache(const std::filesystem::path&, std::span<const DocState<double>>, const CacheHeader&);
template DocState<float> DocCacheReader::load<float>(const std::string&) const;
template DocState<double> DocCacheReader::load<double>(const std::string&) const;

}  // namespace mice
