#pragma once

// Little-endian binary records shared by checkpoints and datasets.
//
// Tensor record:
//   "HFM1"            4 bytes magic
//   dtype             u8   (1 = f32, 2 = f64)
//   rank              u8
//   extents           u32 x rank
//   values            raw IEEE-754, row-major

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "homofm/tensor/tensor.hpp"

namespace homofm {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::kF32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::kF64;
}

class ByteWriter {
 public:
  void put_u8(std::uint8_t v);
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f64(double v);
  void put_bytes(std::span<const std::uint8_t> bytes);
  void put_magic(std::string_view magic);
  /// u32 length prefix followed by the raw characters.
  void put_string(std::string_view s);

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked cursor; every failure is a FormatError carrying the byte
/// offset at which decoding stopped.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t get_u8();
  std::uint32_t get_u32();
  std::uint64_t get_u64();
  double get_f64();
  std::span<const std::uint8_t> get_bytes(std::size_t n);
  void expect_magic(std::string_view magic);
  std::string get_string();

  std::size_t offset() const noexcept { return offset_; }
  bool at_end() const noexcept { return offset_ == bytes_.size(); }

 private:
  void require(std::size_t n);

  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

template <typename T>
void write_tensor(ByteWriter& out, const Tensor<T>& t);

/// Throws FormatError on bad magic, dtype mismatch or truncation.
template <typename T>
Tensor<T> read_tensor(ByteReader& in);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename, so readers never observe a
/// partially written file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace homofm
