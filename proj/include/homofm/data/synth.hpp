#pragma once

// Procedural image patterns and simulated sensor/domain shifts. Images are
// [3 x side x side] float tensors with values in [0, 1].

#include <cstddef>
#include <string>

#include "homofm/data/rng.hpp"
#include "homofm/tensor/tensor.hpp"

namespace homofm::data {

enum class PatternKind { kChecker, kBlobs, kGradients };

std::string pattern_name(PatternKind kind);
/// Throws ConfigError for an unknown name.
PatternKind parse_pattern(const std::string& name);

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kDefaultCheckerCell = 8;

/// checker: {0, 1} squares of `checker_cell` px with a random phase.
/// blobs: thresholded Gaussian-smoothed noise at several scales, mixed
///        from a shared luminance layer and per-channel colour layers.
/// gradients: sums of random oriented sinusoidal gratings and a ramp.
Tensor<float> synth_pattern(std::size_t side, PatternKind kind, Rng& rng,
                            std::size_t checker_cell = kDefaultCheckerCell);

/// Separable Gaussian blur of every channel with mirrored borders.
Tensor<float> gaussian_blur(const Tensor<float>& img, double sigma);

enum class ShiftMode { kNone, kInvert, kGamma, kChannelMix, kPseudoIr };

struct DomainShift {
  ShiftMode mode = ShiftMode::kNone;
  double gamma = 1.0;  // used by kGamma only

  bool operator==(const DomainShift&) const = default;
};

std::string shift_name(ShiftMode mode);
/// Accepts none, invert, gamma, channel_mix, pseudo_ir. Throws ConfigError.
ShiftMode parse_shift_mode(const std::string& name);

/// invert: 1 - v. gamma: v^gamma. channel_mix: fixed invertible 3x3 channel
/// matrix then clamp to [0, 1]. pseudo_ir: Rec.601 luminance through a
/// monotone "hot" colormap. Throws DomainError when `img` leaves [0, 1] or
/// gamma <= 0, ShapeError when channel-based modes get other than 3 channels.
Tensor<float> apply_domain_shift(const Tensor<float>& img, const DomainShift& shift);

}  // namespace homofm::data
