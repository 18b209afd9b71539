#include "homofm/data/dataset_io.hpp"

#include <string>

#include "homofm/error.hpp"
#include "homofm/tensor/serialize.hpp"

namespace homofm::data {

namespace {

constexpr std::uint32_t kVersion = 1;

Tensor<double> matrix_tensor(const Eigen::Matrix3d& m) {
  std::vector<double> v(9);
  for (int i = 0; i < 9; ++i) v[static_cast<std::size_t>(i)] = m(i / 3, i % 3);
  return Tensor<double>({3, 3}, std::move(v));
}

void write_config(ByteWriter& out, const GenConfig& cfg) {
  out.put_u32(static_cast<std::uint32_t>(cfg.image_side));
  out.put_f64(cfg.rho);
  out.put_u8(static_cast<std::uint8_t>(cfg.shift.mode));
  out.put_f64(cfg.shift.gamma);
  out.put_u8(static_cast<std::uint8_t>(cfg.pattern));
  out.put_u32(static_cast<std::uint32_t>(cfg.checker_cell));
  out.put_u64(cfg.seed);
}

GenConfig read_config(ByteReader& in) {
  GenConfig cfg;
  cfg.image_side = in.get_u32();
  cfg.rho = in.get_f64();
  const std::size_t mode_at = in.offset();
  const std::uint8_t mode = in.get_u8();
  if (mode > static_cast<std::uint8_t>(ShiftMode::kPseudoIr)) {
    throw FormatError("unknown shift mode code " + std::to_string(mode), mode_at);
  }
  cfg.shift.mode = static_cast<ShiftMode>(mode);
  cfg.shift.gamma = in.get_f64();
  const std::size_t pattern_at = in.offset();
  const std::uint8_t pattern = in.get_u8();
  if (pattern > static_cast<std::uint8_t>(PatternKind::kGradients)) {
    throw FormatError("unknown pattern code " + std::to_string(pattern), pattern_at);
  }
  cfg.pattern = static_cast<PatternKind>(pattern);
  cfg.checker_cell = in.get_u32();
  cfg.seed = in.get_u64();
  return cfg;
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  if (ds.samples.empty()) throw ConfigError("refusing to write an empty dataset");
  ByteWriter out;
  out.put_magic("HFMD");
  out.put_u32(kVersion);
  out.put_u32(static_cast<std::uint32_t>(ds.samples.size()));
  write_config(out, ds.config);
  for (const PairSample& s : ds.samples) {
    write_tensor(out, s.source);
    write_tensor(out, s.target);
    write_tensor(out, matrix_tensor(s.h_gt.matrix()));
    write_tensor(out, s.w_gt);
    out.put_u8(static_cast<std::uint8_t>(s.domain_source));
    out.put_u8(static_cast<std::uint8_t>(s.domain_target));
  }
  return out.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic("HFMD");
  const std::size_t version_at = in.offset();
  if (const std::uint32_t v = in.get_u32(); v != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(v), version_at);
  }
  const std::uint32_t count = in.get_u32();
  Dataset ds;
  ds.config = read_config(in);
  ds.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    PairSample s;
    s.source = read_tensor<float>(in);
    s.target = read_tensor<float>(in);
    const std::size_t h_at = in.offset();
    const Tensor<double> h = read_tensor<double>(in);
    if (h.shape() != Shape{3, 3}) throw FormatError("h_gt record is not 3x3", h_at);
    Eigen::Matrix3d m;
    for (int k = 0; k < 9; ++k) m(k / 3, k % 3) = h[static_cast<std::size_t>(k)];
    try {
      s.h_gt = geometry::Homography::from_canonical(m);
    } catch (const DegeneracyError& e) {
      throw FormatError(std::string("invalid h_gt: ") + e.what(), h_at);
    }
    s.w_gt = read_tensor<float>(in);
    s.domain_source = in.get_u8();
    s.domain_target = in.get_u8();
    ds.samples.push_back(std::move(s));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after last sample", in.offset());
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto bytes = encode_dataset(ds);
  write_file(path, bytes);
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace homofm::data
