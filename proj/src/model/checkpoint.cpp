#include "homofm/model/checkpoint.hpp"

#include <sstream>

#include "homofm/error.hpp"
#include "homofm/tensor/serialize.hpp"

namespace homofm::model {

namespace {

constexpr std::uint32_t kVersion = 1;

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, std::uint64_t step) {
  ByteWriter out;
  out.put_magic("HFMC");
  out.put_u32(kVersion);
  const std::string text = model.config.architecture_text();
  out.put_string(text);
  out.put_u64(fnv1a64(text));
  out.put_u64(step);
  out.put_u32(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& [name, tensor] : model.params.entries()) {
    out.put_string(name);
    write_tensor(out, tensor);
  }
  return out.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic("HFMC");
  const std::size_t version_at = in.offset();
  if (const std::uint32_t v = in.get_u32(); v != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v), version_at);
  }
  const std::size_t text_at = in.offset();
  const std::string text = in.get_string();
  const std::uint64_t hash = in.get_u64();
  if (hash != fnv1a64(text)) throw FormatError("architecture hash does not match its text", text_at);

  Checkpoint ck;
  try {
    ck.model.config = parse_architecture_text(text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad architecture text: ") + e.what(), text_at);
  }
  ck.step = in.get_u64();
  const std::uint32_t count = in.get_u32();

  // Names and shapes must match a fresh layout exactly.
  const Model<float> reference = Model<float>::initialize(ck.model.config, 0);
  if (count != reference.params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                          std::to_string(reference.params.size()),
                      in.offset());
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = in.offset();
    std::string name = in.get_string();
    Tensor<float> t = read_tensor<float>(in);
    const auto& [ref_name, ref] = reference.params.entries()[i];
    if (name != ref_name || t.shape() != ref.shape()) {
      throw FormatError("parameter '" + name + "' " + shape_to_string(t.shape()) +
                            " does not match expected '" + ref_name + "' " +
                            shape_to_string(ref.shape()),
                        at);
    }
    t.set_requires_grad(true);
    ck.model.params.add(name, std::move(t));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after checkpoint", in.offset());
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     std::uint64_t step) {
  write_file(path, encode_checkpoint(model, step));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.model.config.hash() != expected.hash()) {
    throw IncompatibleCheckpointError("checkpoint architecture hash " +
                                      hex(ck.model.config.hash()) + " does not match model " +
                                      hex(expected.hash()));
  }
  ck.model.config.discriminator = expected.discriminator;
  return ck;
}

}  // namespace homofm::model
