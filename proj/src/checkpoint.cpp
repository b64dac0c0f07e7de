#include "mice/checkpoint.hpp"

#include <cstring>

namespace mice {

namespace {

std::vector<std::uint32_t> config_fields(const ModelConfig& c) {
  return {static_cast<std::uint32_t>(c.layers),     static_cast<std::uint32_t>(c.hidden),
          static_cast<std::uint32_t>(c.heads),      static_cast<std::uint32_t>(c.ffn),
          static_cast<std::uint32_t>(c.vocab),      static_cast<std::uint32_t>(c.max_query),
          static_cast<std::uint32_t>(c.max_doc),    static_cast<std::uint32_t>(c.first_interaction),
          static_cast<std::uint32_t>(c.interaction_layers)};
}

ModelConfig config_from_fields(const std::vector<std::uint32_t>& f) {
  if (f.size() != 9) throw FormatError("checkpoint: expected 9 config fields, got " + std::to_string(f.size()));
  ModelConfig c;
  c.layers = f[0];
  c.hidden = f[1];
  c.heads = f[2];
  c.ffn = f[3];
  c.vocab = f[4];
  c.max_query = f[5];
  c.max_doc = f[6];
  c.first_interaction = f[7];
  c.interaction_layers = f[8];
  return c;
}

}  // namespace

const Tensor<float>& CheckpointData::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint: missing tensor '" + name + "'");
}

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointData& ckpt) {
  io::ByteWriter w;
  w.str(std::string_view(kCheckpointMagic, 8));
  w.u32(static_cast<std::uint32_t>(ckpt.kind));
  const auto fields = config_fields(ckpt.config);
  w.u32(static_cast<std::uint32_t>(fields.size()));
  for (auto f : fields) w.u32(f);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

CheckpointData parse_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  if (r.str(8) != std::string_view(kCheckpointMagic, 8)) throw FormatError("checkpoint: bad magic");
  CheckpointData ckpt;
  const auto kind = r.u32();
  if (kind > 1) throw FormatError("checkpoint: unknown model kind " + std::to_string(kind));
  ckpt.kind = static_cast<ModelKind>(kind);
  std::vector<std::uint32_t> fields(r.u32());
  if (fields.size() > 64) throw FormatError("checkpoint: implausible config block");
  for (auto& f : fields) f = r.u32();
  ckpt.config = config_from_fields(fields);
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw FormatError("checkpoint: tensor '" + name + "' has a zero dimension");
    }
    const std::size_t n = shape_numel(shape);
    if (n * 4 > r.remaining()) throw FormatError("checkpoint: truncated file");
    Tensor<float> t(shape);
    for (auto& v : t.data) v = r.f32();
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& ckpt) {
  io::write_file_atomic(path, serialize_checkpoint(ckpt));
}

CheckpointData read_checkpoint(const std::filesystem::path& path, Fingerprint* fingerprint) {
  const auto bytes = io::read_file(path);
  if (fingerprint != nullptr) *fingerprint = io::sha256(bytes);
  return parse_checkpoint(bytes);
}

template <typename T>
CheckpointData to_checkpoint(const Weights<T>& w) {
  CheckpointData ckpt;
  ckpt.kind = ModelKind::CrossEncoder;
  ckpt.config = w.config;
  w.visit([&](const std::string& name, const Tensor<T>& t) {
    ckpt.tensors.emplace_back(name, t.template cast<float>());
  });
  return ckpt;
}

template <typename T>
Weights<T> weights_from_checkpoint(const CheckpointData& ckpt) {
  if (ckpt.kind != ModelKind::CrossEncoder) {
    throw FormatError("checkpoint holds a mid-fusion model, expected a cross-encoder");
  }
  ckpt.config.validate();
  // Initialize for the shapes, then overwrite every tensor from the file.
  Weights<T> w = Weights<T>::init(ckpt.config, 0);
  w.visit([&](const std::string& name, Tensor<T>& t) {
    const Tensor<float>& src = ckpt.get(name);
    if (src.shape != t.shape) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(src.shape) +
                        ", expected " + shape_str(t.shape));
    }
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<T>(src.data[i]);
  });
  return w;
}

template CheckpointData to_checkpoint(const Weights<float>&);
template CheckpointData to_checkpoint(const Weights<double>&);
template Weights<float> weights_from_checkpoint(const CheckpointData&);
template Weights<double> weights_from_checkpoint(const CheckpointData&);

}  // namespace mice
