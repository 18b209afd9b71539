#include "homofm/data/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "homofm/error.hpp"
#include "homofm/tensor/serialize.hpp"

namespace homofm::data {

namespace {

class HeaderParser {
 public:
  explicit HeaderParser(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t next_number() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 24)) throw FormatError("PNM header value too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError("expected a number in PNM header", start);
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError("missing separator before PNM raster", pos_);
    }
    return pos_ + 1;
  }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
};

}  // namespace

Tensor<float> read_pnm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file: " + path.string(), 0);
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  HeaderParser header(bytes);
  const std::size_t width = header.next_number();
  const std::size_t height = header.next_number();
  const std::size_t maxval = header.next_number();
  if (width == 0 || height == 0) throw FormatError("PNM image has zero extent", header.pos_);
  if (maxval == 0 || maxval > 255) {
    throw FormatError("only 8-bit PNM is supported (maxval " + std::to_string(maxval) + ")",
                      header.pos_);
  }
  const std::size_t start = header.raster_start();
  const std::size_t n = width * height * channels;
  if (bytes.size() < start + n) throw FormatError("truncated PNM raster", bytes.size());

  std::vector<float> data(n);
  const float inv = 1.0f / static_cast<float>(maxval);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::uint8_t v = bytes[start + (y * width + x) * channels + c];
        data[(c * height + y) * width + x] = std::min(1.0f, static_cast<float>(v) * inv);
      }
    }
  }
  return Tensor<float>({channels, height, width}, std::move(data));
}

void write_pnm(const std::filesystem::path& path, const Tensor<float>& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
    throw ShapeError("write_pnm expects [1|3 x H x W], got " + shape_to_string(img.shape()));
  }
  const std::size_t channels = img.dim(0), height = img.dim(1), width = img.dim(2);
  const std::string header = std::string(channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + img.numel());
  const auto data = img.data();
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        float v = data[(c * height + y) * width + x];
        v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
        bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
      }
    }
  }
  write_file(path, bytes);
}

Tensor<float> to_rgb(const Tensor<float>& img) {
  if (img.rank() != 3) throw ShapeError("to_rgb expects [C x H x W]");
  if (img.dim(0) == 3) return img;
  if (img.dim(0) != 1) throw ShapeError("to_rgb expects 1 or 3 channels");
  std::vector<float> out;
  out.reserve(img.numel() * 3);
  for (int c = 0; c < 3; ++c) out.insert(out.end(), img.data().begin(), img.data().end());
  return Tensor<float>({3, img.dim(1), img.dim(2)}, std::move(out));
}

namespace {

// Liang-Barsky clip of the segment a-b to [lo_x, hi_x] x [lo_y, hi_y].
bool clip_segment(geometry::Point2& a, geometry::Point2& b, double lo_x, double hi_x, double lo_y,
                  double hi_y) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - lo_x, hi_x - a.x, a.y - lo_y, hi_y - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return false;
  }
  b = {a.x + t1 * dx, a.y + t1 * dy};
  a = {a.x + t0 * dx, a.y + t0 * dy};
  return true;
}

}  // namespace

void draw_polygon(Tensor<float>& rgb, std::span<const geometry::Point2> points,
                  std::array<float, 3> color) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("draw_polygon expects [3 x H x W]");
  const std::size_t height = rgb.dim(1), width = rgb.dim(2);
  auto data = rgb.mutable_data();
  for (std::size_t i = 0; i < points.size(); ++i) {
    geometry::Point2 a = points[i], b = points[(i + 1) % points.size()];
    if (!std::isfinite(a.x) || !std::isfinite(a.y) || !std::isfinite(b.x) || !std::isfinite(b.y)) {
      continue;
    }
    if (!clip_segment(a, b, 0.0, static_cast<double>(width) - 1.0, 0.0,
                      static_cast<double>(height) - 1.0)) {
      continue;
    }
    const double len = std::max(std::abs(b.x - a.x), std::abs(b.y - a.y));
    const auto steps = static_cast<std::size_t>(std::ceil(len)) + 1;
    for (std::size_t k = 0; k <= steps; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(steps);
      const auto x = static_cast<std::size_t>(std::lround(a.x + t * (b.x - a.x)));
      const auto y = static_cast<std::size_t>(std::lround(a.y + t * (b.y - a.y)));
      if (x >= width || y >= height) continue;
      for (std::size_t c = 0; c < 3; ++c) data[(c * height + y) * width + x] = color[c];
    }
  }
}

}  // namespace homofm::data
