#include "homofm/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "homofm/error.hpp"

namespace homofm::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Symmetric border folding: -1 -> 0, n -> n - 1.
std::ptrdiff_t fold(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<float> blur_plane(const std::vector<float>& src, std::size_t h, std::size_t w,
                              double sigma) {
  if (sigma <= 0.0) return src;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;

  const auto sh = static_cast<std::ptrdiff_t>(h), sw = static_cast<std::ptrdiff_t>(w);
  std::vector<float> tmp(src.size()), out(src.size());
  for (std::ptrdiff_t y = 0; y < sh; ++y) {
    for (std::ptrdiff_t x = 0; x < sw; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               src[static_cast<std::size_t>(y * sw + fold(x + k, sw))];
      }
      tmp[static_cast<std::size_t>(y * sw + x)] = static_cast<float>(acc);
    }
  }
  for (std::ptrdiff_t y = 0; y < sh; ++y) {
    for (std::ptrdiff_t x = 0; x < sw; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               tmp[static_cast<std::size_t>(fold(y + k, sh) * sw + x)];
      }
      out[static_cast<std::size_t>(y * sw + x)] = static_cast<float>(acc);
    }
  }
  return out;
}

// Half-pixel aligned bilinear enlargement of a square plane by `factor`.
std::vector<float> enlarge(const std::vector<float>& src, std::size_t n, std::size_t factor) {
  if (factor == 1) return src;
  const std::size_t m = n * factor;
  std::vector<float> out(m * m);
  const auto last = static_cast<double>(n - 1);
  for (std::size_t y = 0; y < m; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) / static_cast<double>(factor) - 0.5, 0.0, last);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, n - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < m; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) / static_cast<double>(factor) - 0.5, 0.0, last);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, n - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = (1 - fx) * src[y0 * n + x0] + fx * src[y0 * n + x1];
      const double bottom = (1 - fx) * src[y1 * n + x0] + fx * src[y1 * n + x1];
      out[y * m + x] = static_cast<float>((1 - fy) * top + fy * bottom);
    }
  }
  return out;
}

// Weighted stack of binarised smoothed noise layers, values in [0, 1].
// Wide smoothing scales are synthesised on a coarser lattice and enlarged,
// which keeps the blur cost independent of the scale.
std::vector<float> blob_layer(std::size_t side, Rng& rng) {
  const double unit = static_cast<double>(side) / 64.0;
  const std::array<double, 3> sigmas = {1.5 * unit, 3.0 * unit, 6.0 * unit};
  const std::array<double, 3> weights = {0.25, 0.35, 0.40};
  const std::size_t n = side * side;
  std::vector<float> acc(n, 0.0f);
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    std::size_t factor = 1;
    while (factor < 4 && sigmas[s] / static_cast<double>(2 * factor) >= 1.5 &&
           side % (2 * factor) == 0) {
      factor *= 2;
    }
    const std::size_t small = side / factor;
    std::vector<float> noise(small * small);
    for (float& v : noise) v = static_cast<float>(rng.normal());
    const std::vector<float> smooth =
        enlarge(blur_plane(noise, small, small, sigmas[s] / static_cast<double>(factor)), small, factor);
    for (std::size_t i = 0; i < n; ++i) {
      if (smooth[i] > 0.0f) acc[i] += static_cast<float>(weights[s]);
    }
  }
  return blur_plane(acc, side, side, 0.7 * unit);
}

Tensor<float> checker(std::size_t side, std::size_t cell, Rng& rng) {
  if (cell == 0) throw ConfigError("checker cell must be positive");
  const std::size_t px = rng.below(2 * cell), py = rng.below(2 * cell);
  std::vector<float> data(kImageChannels * side * side);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const std::size_t parity = ((x + px) / cell + (y + py) / cell) % 2;
        data[(c * side + y) * side + x] = static_cast<float>(parity);
      }
    }
  }
  return Tensor<float>({kImageChannels, side, side}, std::move(data));
}

Tensor<float> blobs(std::size_t side, Rng& rng) {
  const std::vector<float> luma = blob_layer(side, rng);
  std::vector<float> data(kImageChannels * side * side);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    const std::vector<float> tint = blob_layer(side, rng);
    for (std::size_t i = 0; i < side * side; ++i) {
      data[c * side * side + i] = std::clamp(0.6f * luma[i] + 0.4f * tint[i], 0.0f, 1.0f);
    }
  }
  return Tensor<float>({kImageChannels, side, side}, std::move(data));
}

Tensor<float> gradients(std::size_t side, Rng& rng) {
  struct Grating {
    double fx, fy, phase, amp;
  };
  const auto s = static_cast<double>(side);
  std::array<Grating, 4> gratings{};
  for (Grating& g : gratings) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double freq = rng.uniform(1.5, 6.0) / s;
    g = {freq * std::cos(theta), freq * std::sin(theta), rng.uniform(0.0, kTwoPi),
         rng.uniform(0.06, 0.14)};
  }
  std::vector<float> data(kImageChannels * side * side);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    const double rx = rng.uniform(-0.25, 0.25) / s, ry = rng.uniform(-0.25, 0.25) / s;
    const double tint_phase = rng.uniform(0.0, kTwoPi);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const auto xd = static_cast<double>(x), yd = static_cast<double>(y);
        double v = 0.5 + rx * (xd - s / 2) + ry * (yd - s / 2);
        for (std::size_t k = 0; k < gratings.size(); ++k) {
          const Grating& g = gratings[k];
          const double phase = g.phase + (k == 0 ? tint_phase : 0.0);
          v += g.amp * std::sin(kTwoPi * (g.fx * xd + g.fy * yd) + phase);
        }
        data[(c * side + y) * side + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return Tensor<float>({kImageChannels, side, side}, std::move(data));
}

void require_unit_range(const Tensor<float>& img) {
  for (float v : img.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("domain shift input outside [0, 1]");
  }
}

}  // namespace

std::string pattern_name(PatternKind kind) {
  switch (kind) {
    case PatternKind::kChecker: return "checker";
    case PatternKind::kBlobs: return "blobs";
    case PatternKind::kGradients: return "gradients";
  }
  return "unknown";
}

PatternKind parse_pattern(const std::string& name) {
  if (name == "checker") return PatternKind::kChecker;
  if (name == "blobs") return PatternKind::kBlobs;
  if (name == "gradients") return PatternKind::kGradients;
  throw ConfigError("unknown pattern '" + name + "'");
}

Tensor<float> synth_pattern(std::size_t side, PatternKind kind, Rng& rng,
                            std::size_t checker_cell) {
  if (side == 0) throw ConfigError("pattern side must be positive");
  switch (kind) {
    case PatternKind::kChecker: return checker(side, checker_cell, rng);
    case PatternKind::kBlobs: return blobs(side, rng);
    case PatternKind::kGradients: return gradients(side, rng);
  }
  throw ConfigError("unknown pattern kind");
}

Tensor<float> gaussian_blur(const Tensor<float>& img, double sigma) {
  if (img.rank() != 3) throw ShapeError("gaussian_blur expects [C x H x W]");
  const std::size_t channels = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<float> out;
  out.reserve(img.numel());
  for (std::size_t c = 0; c < channels; ++c) {
    const auto plane = img.data().subspan(c * h * w, h * w);
    const std::vector<float> blurred = blur_plane({plane.begin(), plane.end()}, h, w, sigma);
    out.insert(out.end(), blurred.begin(), blurred.end());
  }
  return Tensor<float>(img.shape(), std::move(out));
}

std::string shift_name(ShiftMode mode) {
  switch (mode) {
    case ShiftMode::kNone: return "none";
    case ShiftMode::kInvert: return "invert";
    case ShiftMode::kGamma: return "gamma";
    case ShiftMode::kChannelMix: return "channel_mix";
    case ShiftMode::kPseudoIr: return "pseudo_ir";
  }
  return "unknown";
}

ShiftMode parse_shift_mode(const std::string& name) {
  if (name == "none") return ShiftMode::kNone;
  if (name == "invert") return ShiftMode::kInvert;
  if (name == "gamma") return ShiftMode::kGamma;
  if (name == "channel_mix") return ShiftMode::kChannelMix;
  if (name == "pseudo_ir") return ShiftMode::kPseudoIr;
  throw ConfigError("unknown shift mode '" + name + "'");
}

Tensor<float> apply_domain_shift(const Tensor<float>& img, const DomainShift& shift) {
  require_unit_range(img);
  std::vector<float> out(img.data().begin(), img.data().end());
  switch (shift.mode) {
    case ShiftMode::kNone:
      break;
    case ShiftMode::kInvert:
      for (float& v : out) v = 1.0f - v;
      break;
    case ShiftMode::kGamma: {
      if (!(shift.gamma > 0.0)) throw DomainError("gamma must be positive");
      if (shift.gamma == 1.0) break;
      for (float& v : out) v = static_cast<float>(std::pow(static_cast<double>(v), shift.gamma));
      break;
    }
    case ShiftMode::kChannelMix:
    case ShiftMode::kPseudoIr: {
      if (img.rank() != 3 || img.dim(0) != kImageChannels) {
        throw ShapeError("channel shift expects [3 x H x W], got " + shape_to_string(img.shape()));
      }
      const std::size_t plane = img.dim(1) * img.dim(2);
      const auto in = img.data();
      if (shift.mode == ShiftMode::kChannelMix) {
        // Rows sum to one; determinant -0.22.
        static constexpr double kMix[3][3] = {
            {0.2, 0.7, 0.1}, {0.6, 0.1, 0.3}, {0.1, 0.3, 0.6}};
        for (std::size_t i = 0; i < plane; ++i) {
          for (std::size_t r = 0; r < 3; ++r) {
            double v = 0.0;
            for (std::size_t c = 0; c < 3; ++c) v += kMix[r][c] * in[c * plane + i];
            out[r * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) {
          const double lum = 0.299 * in[i] + 0.587 * in[plane + i] + 0.114 * in[2 * plane + i];
          for (std::size_t r = 0; r < 3; ++r) {
            const double v = 3.0 * lum - static_cast<double>(r);
            out[r * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      break;
    }
  }
  return Tensor<float>(img.shape(), std::move(out));
}

}  // namespace homofm::data
