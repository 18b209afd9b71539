#include "homofm/tensor/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "homofm/error.hpp"

namespace homofm {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

template <typename V>
void append_raw(std::vector<std::uint8_t>& buf, V v) {
  std::uint8_t tmp[sizeof(V)];
  std::memcpy(tmp, &v, sizeof(V));
  buf.insert(buf.end(), tmp, tmp + sizeof(V));
}

}  // namespace

void ByteWriter::put_u8(std::uint8_t v) { buf_.push_back(v); }
void ByteWriter::put_u32(std::uint32_t v) { append_raw(buf_, v); }
void ByteWriter::put_u64(std::uint64_t v) { append_raw(buf_, v); }
void ByteWriter::put_f64(double v) { append_raw(buf_, v); }

void ByteWriter::put_bytes(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::put_magic(std::string_view magic) {
  buf_.insert(buf_.end(), magic.begin(), magic.end());
}

void ByteWriter::put_string(std::string_view s) {
  put_u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteReader::require(std::size_t n) {
  if (bytes_.size() - offset_ < n) {
    throw FormatError("truncated input: need " + std::to_string(n) + " more bytes", offset_);
  }
}

std::uint8_t ByteReader::get_u8() {
  require(1);
  return bytes_[offset_++];
}

std::uint32_t ByteReader::get_u32() {
  require(4);
  std::uint32_t v;
  std::memcpy(&v, bytes_.data() + offset_, 4);
  offset_ += 4;
  return v;
}

std::uint64_t ByteReader::get_u64() {
  require(8);
  std::uint64_t v;
  std::memcpy(&v, bytes_.data() + offset_, 8);
  offset_ += 8;
  return v;
}

double ByteReader::get_f64() {
  require(8);
  double v;
  std::memcpy(&v, bytes_.data() + offset_, 8);
  offset_ += 8;
  return v;
}

std::span<const std::uint8_t> ByteReader::get_bytes(std::size_t n) {
  require(n);
  auto s = bytes_.subspan(offset_, n);
  offset_ += n;
  return s;
}

void ByteReader::expect_magic(std::string_view magic) {
  const std::size_t at = offset_;
  auto got = get_bytes(magic.size());
  if (std::memcmp(got.data(), magic.data(), magic.size()) != 0) {
    throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", at);
  }
}

std::string ByteReader::get_string() {
  const std::uint32_t n = get_u32();
  auto s = get_bytes(n);
  return std::string(s.begin(), s.end());
}

template <typename T>
void write_tensor(ByteWriter& out, const Tensor<T>& t) {
  out.put_magic("HFM1");
  out.put_u8(static_cast<std::uint8_t>(dtype_of<T>()));
  out.put_u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) out.put_u32(static_cast<std::uint32_t>(d));
  const auto data = t.data();
  out.put_bytes({reinterpret_cast<const std::uint8_t*>(data.data()), data.size() * sizeof(T)});
}

template <typename T>
Tensor<T> read_tensor(ByteReader& in) {
  in.expect_magic("HFM1");
  const std::size_t dtype_at = in.offset();
  const std::uint8_t dtype = in.get_u8();
  if (dtype != static_cast<std::uint8_t>(dtype_of<T>())) {
    throw FormatError("unexpected dtype code " + std::to_string(dtype), dtype_at);
  }
  const std::size_t rank_at = in.offset();
  const std::uint8_t rank = in.get_u8();
  if (rank == 0) throw FormatError("tensor rank must be positive", rank_at);
  Shape shape(rank);
  for (auto& d : shape) {
    const std::size_t at = in.offset();
    d = in.get_u32();
    if (d == 0) throw FormatError("zero tensor extent", at);
  }
  const std::size_t n = shape_numel(shape);
  auto raw = in.get_bytes(n * sizeof(T));
  std::vector<T> values(n);
  std::memcpy(values.data(), raw.data(), raw.size());
  return Tensor<T>(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template void write_tensor<float>(ByteWriter&, const Tensor<float>&);
template void write_tensor<double>(ByteWriter&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(ByteReader&);
template Tensor<double> read_tensor<double>(ByteReader&);

}  // namespace homofm
