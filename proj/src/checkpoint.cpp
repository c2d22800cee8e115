#include "depthcontrast/checkpoint.hpp"

#include "binary_io.hpp"

namespace dc {

using json = nlohmann::ordered_json;

namespace {

bool is_buffer_name(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

}  // namespace

template <typename Scalar>
std::string encode_checkpoint(const ModelParams<Scalar>& params, const json& extra) {
  json snapshot;
  snapshot["model"] = to_json(params.config());
  snapshot["seed"] = params.seed();
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) snapshot[it.key()] = it.value();
  const std::string text = snapshot.dump(2);

  std::string out = "DCKP";
  binio::put_u32(out, kCheckpointVersion);
  binio::put_u32(out, std::uint32_t(sizeof(Scalar) * 8));
  binio::put_u32(out, std::uint32_t(text.size()));
  out += text;
  binio::put_u32(out, std::uint32_t(params.entries().size()));
  for (const auto& e : params.entries()) {
    binio::put_u32(out, std::uint32_t(e.name.size()));
    out += e.name;
    binio::put_u32(out, std::uint32_t(e.value.rank()));
    for (Index d : e.value.shape()) binio::put_u32(out, std::uint32_t(d));
    for (Index i = 0; i < e.value.size(); ++i) {
      if constexpr (sizeof(Scalar) == 4)
        binio::put_f32(out, e.value[i]);
      else
        binio::put_f64(out, e.value[i]);
    }
  }
  return out;
}

template <typename Scalar>
void write_checkpoint(const std::filesystem::path& path, const ModelParams<Scalar>& params, const json& extra) {
  binio::write_file(path, encode_checkpoint(params, extra));
}

template <typename Scalar>
Checkpoint<Scalar> decode_checkpoint(std::string_view bytes, const std::string& source) {
  binio::Reader r(bytes, source);
  if (r.bytes(4) != "DCKP") throw IoError(source + ": bad magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t bits = r.u32();
  if (bits != 32 && bits != 64) r.fail("unsupported scalar width " + std::to_string(bits));
  const std::uint32_t text_len = r.u32();
  const std::size_t text_at = r.offset();
  json snapshot;
  try {
    snapshot = json::parse(r.bytes(text_len));
  } catch (const json::exception& e) {
    throw IoError(source + ": config snapshot at byte offset " + std::to_string(text_at) + " is not valid: " + e.what());
  }
  if (!snapshot.contains("model") || !snapshot.contains("seed"))
    throw IoError(source + ": config snapshot lacks model/seed");
  ModelConfig cfg = model_config_from_json(snapshot["model"]);
  Checkpoint<Scalar> ck{ModelParams<Scalar>(cfg, snapshot["seed"].get<std::uint64_t>()), snapshot, bits};

  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = r.u32();
    std::string name(r.bytes(name_len));
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32();
      if (d == 0) r.fail("zero dimension in tensor " + name);
      shape.push_back(Index(d));
    }
    const Index n = shape_size(shape);
    if (r.remaining() < std::size_t(n) * (bits / 8))
      r.fail("payload of tensor " + name + " truncated");
    Tensor<Scalar> value(shape);
    for (Index i = 0; i < n; ++i) value[i] = bits == 32 ? Scalar(r.f32()) : Scalar(r.f64());
    const ParamKind kind = is_buffer_name(name) ? ParamKind::buffer : ParamKind::weight;
    ck.params.add(std::move(name), std::move(value), kind);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last tensor");
  return ck;
}

template <typename Scalar>
Checkpoint<Scalar> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<Scalar>(binio::read_file(path), path.string());
}

template <typename Scalar>
void load_weights(ModelParams<Scalar>& into, const ModelParams<Scalar>& from) {
  for (auto& e : into.entries()) {
    if (!from.contains(e.name)) throw ShapeError("checkpoint is missing tensor " + e.name);
    const Tensor<Scalar>& src = from.at(e.name);
    if (src.shape() != e.value.shape())
      throw ShapeError("tensor " + e.name + " has shape " + shape_string(src.shape()) + " in checkpoint but " +
                       shape_string(e.value.shape()) + " in config");
  }
  for (const auto& e : from.entries())
    if (!into.contains(e.name)) throw ShapeError("checkpoint tensor " + e.name + " is not part of the model");
  for (auto& e : into.entries()) e.value = from.at(e.name);
}

#define DC_INSTANTIATE(S)                                                                     \
  template std::string encode_checkpoint(const ModelParams<S>&, const json&);                 \
  template void write_checkpoint(const std::filesystem::path&, const ModelParams<S>&, const json&); \
  template Checkpoint<S> decode_checkpoint(std::string_view, const std::string&);             \
  template Checkpoint<S> read_checkpoint(const std::filesystem::path&);                       \
  template void load_weights(ModelParams<S>&, const ModelParams<S>&);

DC_INSTANTIATE(float)
DC_INSTANTIATE(double)
#undef DC_INSTANTIATE

}  // namespace dc
