#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mice/checkpoint.hpp"
#include "mice/doccache.hpp"
#include "oracles.hpp"

using namespace mice;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mice_tests_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

// Little-endian reads straight off the byte vector.
std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (std::uint32_t(b[at + 3]) << 24);
}
std::uint64_t le64(const std::vector<std::uint8_t>& b, std::size_t at) {
  return le32(b, at) | (std::uint64_t(le32(b, at + 4)) << 32);
}
float lef(const std::vector<std::uint8_t>& b, std::size_t at) {
  const std::uint32_t bits = le32(b, at);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 12;
  cfg.vocab = 20;
  cfg.max_query = 4;
  cfg.max_doc = 8;
  cfg.first_interaction = 1;
  cfg.interaction_layers = 2;
  return cfg;
}

MiceModel<float> tiny_model(std::uint64_t seed = 1) {
  return MiceModel<float>(from_cross_encoder(Weights<float>::init(tiny_config(), seed), 1, 2));
}

std::vector<DocState<float>> states_for(const MiceModel<float>& model, const std::vector<std::size_t>& lengths) {
  std::vector<DocState<float>> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    std::vector<TokenId> d(lengths[i]);
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = TokenId(4 + (i * 7 + j) % 16);
    out.push_back(model.encode_document("doc" + std::to_string(i), d));
  }
  return out;
}

CacheHeader header_for(const MiceModel<float>& model, std::size_t count) {
  CacheHeader h;
  h.d = 8;
  h.ell_star = 1;
  h.checkpoint_hash = model.fingerprint();
  h.doc_count = static_cast<std::uint32_t>(count);
  return h;
}

}  // namespace

TEST(Checkpoint, RoundTripIsByteExact) {
  const auto w = Weights<float>::init(tiny_config(), 3);
  const auto bytes = serialize_checkpoint(to_checkpoint(w));
  const auto back = weights_from_checkpoint<float>(parse_checkpoint(bytes));
  EXPECT_EQ(back.config, w.config);
  EXPECT_EQ(serialize_checkpoint(to_checkpoint(back)), bytes);
  EXPECT_EQ(fingerprint_of(back), io::sha256(bytes));
}

TEST(Checkpoint, FileDigestEqualsFingerprint) {
  const auto w = Weights<float>::init(tiny_config(), 4);
  const auto path = temp_path("w.ckpt");
  write_checkpoint(path, to_checkpoint(w));
  Fingerprint fp{};
  read_checkpoint(path, &fp);
  EXPECT_EQ(fp, fingerprint_of(w));
}

TEST(Checkpoint, ByteLayout) {
  CheckpointData c;
  c.config = tiny_config();
  c.tensors.emplace_back("a", Tensor<float>({2}, {1.5f, -2.0f}));
  const auto b = serialize_checkpoint(c);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), "MICEWTS1");
  EXPECT_EQ(le32(b, 8), 0u);
  const std::uint32_t fields = le32(b, 12);
  EXPECT_EQ(fields, 9u);
  std::size_t at = 16 + 4 * fields;
  EXPECT_EQ(le32(b, 16), 3u);  // layers
  EXPECT_EQ(le32(b, at), 1u);
  EXPECT_EQ(le32(b, at + 4), 1u);
  EXPECT_EQ(b[at + 8], 'a');
  EXPECT_EQ(le32(b, at + 9), 1u);
  EXPECT_EQ(le32(b, at + 13), 2u);
  EXPECT_EQ(lef(b, at + 17), 1.5f);
  EXPECT_EQ(lef(b, at + 21), -2.0f);
  EXPECT_EQ(b.size(), at + 25);
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  const auto bytes = serialize_checkpoint(to_checkpoint(Weights<float>::init(tiny_config(), 5)));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(parse_checkpoint(truncated), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(magic), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(parse_checkpoint(trailing), FormatError);
  const auto mice = to_checkpoint(from_cross_encoder(Weights<float>::init(tiny_config(), 5), 1, 2));
  EXPECT_THROW(weights_from_checkpoint<float>(mice), FormatError);
}

TEST(DocCache, OffsetTableMatchesByteReader) {
  const auto model = tiny_model();
  const auto states = states_for(model, {1, 4, 7});
  const auto b = serialize_cache<float>(states, header_for(model, 3));
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), "MICEDOC1");
  EXPECT_EQ(le32(b, 8), 1u);
  EXPECT_EQ(le32(b, 12), 8u);
  EXPECT_EQ(le32(b, 16), 1u);
  EXPECT_EQ(std::memcmp(b.data() + 20, model.fingerprint().data(), 32), 0);
  EXPECT_EQ(le32(b, 52), 3u);
  std::size_t at = 56;
  std::vector<std::uint64_t> offsets;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::uint32_t len = le32(b, at);
    EXPECT_EQ(std::string(b.begin() + at + 4, b.begin() + at + 4 + len), "doc" + std::to_string(i));
    at += 4 + len;
    EXPECT_EQ(le32(b, at), states[i].m);
    offsets.push_back(le64(b, at + 4));
    at += 12;
  }
  EXPECT_EQ(offsets[0], at);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t rows = states[i].m + 1;
    for (std::size_t k = 0; k < rows * 8; ++k) {
      EXPECT_EQ(lef(b, offsets[i] + 4 * k), states[i].states[k]);
    }
    const std::uint64_t end = offsets[i] + rows * 8 * 4;
    EXPECT_EQ(end, i + 1 < 3 ? offsets[i + 1] : b.size());
  }
}

TEST(DocCache, RoundTripIsByteExact) {
  const auto model = tiny_model();
  const auto states = states_for(model, {1, 4, 7, 2});
  const auto path = temp_path("round.bin");
  write_cache<float>(path, states, header_for(model, states.size()));
  DocCacheReader reader(path, CacheCheck{model.fingerprint(), 8, 1, true});
  EXPECT_FALSE(reader.mismatch());
  for (const auto& s : states) {
    const auto back = reader.load<float>(s.doc_id);
    EXPECT_EQ(back.m, s.m);
    EXPECT_EQ(back.checkpoint, s.checkpoint);
    ASSERT_EQ(back.states.shape, s.states.shape);
    EXPECT_EQ(std::memcmp(back.states.data.data(), s.states.data.data(), s.states.numel() * 4), 0);
    EXPECT_EQ(model.score(std::vector<TokenId>{5, 6}, back), model.score(std::vector<TokenId>{5, 6}, s));
  }
  std::vector<DocState<float>> reloaded;
  for (const auto& e : reader.entries()) reloaded.push_back(reader.load<float>(e.doc_id));
  EXPECT_EQ(serialize_cache<float>(reloaded, reader.header()), io::read_file(path));
  EXPECT_THROW(reader.load<float>("missing"), InputError);
}

TEST(DocCache, WrongCheckpointStrictThrowsLenientWarns) {
  const auto model = tiny_model(1);
  const auto other = tiny_model(2);
  const auto states = states_for(model, {3});
  const auto path = temp_path("mismatch.bin");
  write_cache<float>(path, states, header_for(model, 1));
  EXPECT_THROW(DocCacheReader(path, CacheCheck{other.fingerprint(), std::nullopt, std::nullopt, true}),
               ConsistencyError);
  DocCacheReader lenient(path, CacheCheck{other.fingerprint(), std::nullopt, std::nullopt, false});
  EXPECT_TRUE(lenient.mismatch());
  EXPECT_THROW(DocCacheReader(path, CacheCheck{std::nullopt, 16, std::nullopt, true}), ConsistencyError);
}

TEST(DocCache, WriterRejectsBadStates) {
  const auto model = tiny_model();
  auto states = states_for(model, {2, 3});
  states[1].doc_id = states[0].doc_id;
  EXPECT_THROW(serialize_cache<float>(states, header_for(model, 2)), InputError);
  auto foreign = states_for(tiny_model(9), {2});
  EXPECT_THROW(serialize_cache<float>(foreign, header_for(model, 1)), ConsistencyError);
}

TEST(DocCache, TruncatedFileIsRejected) {
  const auto model = tiny_model();
  const auto states = states_for(model, {4, 4});
  auto bytes = serialize_cache<float>(states, header_for(model, 2));
  bytes.resize(bytes.size() - 10);
  const auto path = temp_path("trunc.bin");
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  EXPECT_THROW(DocCacheReader{path}, FormatError);
}
