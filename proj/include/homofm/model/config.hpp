#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace homofm::model {

struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 16;

  /// Channels of both pyramid levels (2 x base).
  std::size_t feature_channels() const noexcept { return 2 * base_channels; }
  bool operator==(const EncoderConfig&) const = default;
};

struct VelocityHeadConfig {
  std::size_t hidden_channels = 64;
  std::size_t n_residual_blocks = 4;
  std::size_t time_embed_dim = 32;

  bool operator==(const VelocityHeadConfig&) const = default;
};

enum class AlphaSchedule { kConstant, kLinearRamp };

struct DomainDiscriminatorConfig {
  std::size_t hidden_dim = 64;
  double alpha_max = 1.0;
  AlphaSchedule schedule = AlphaSchedule::kLinearRamp;

  bool operator==(const DomainDiscriminatorConfig&) const = default;
};

enum class HeadKind { kFlowMatching, kDirectRegression };

struct ModelConfig {
  EncoderConfig encoder;
  VelocityHeadConfig head;
  DomainDiscriminatorConfig discriminator;
  HeadKind head_kind = HeadKind::kFlowMatching;
  /// Hidden width of the direct-regression head; 0 picks the width whose
  /// parameter count is closest to the flow-matching head.
  std::size_t direct_hidden = 0;

  /// Throws ConfigError on zero widths or an odd time_embed_dim.
  void validate() const;

  /// Architecture description, one key=value per line. Training-time knobs
  /// (alpha schedule) are excluded so they do not affect compatibility.
  std::string architecture_text() const;
  /// FNV-1a 64 of architecture_text().
  std::uint64_t hash() const;

  bool operator==(const ModelConfig&) const = default;
};

std::string head_kind_name(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

/// Inverse of architecture_text(). Throws ConfigError.
ModelConfig parse_architecture_text(const std::string& text);

std::uint64_t fnv1a64(const std::string& text);

/// GRL coefficient at `iter`: 0 during warm-up, then alpha_max (constant)
/// or a linear ramp reaching alpha_max at the final iteration.
double grl_alpha(const DomainDiscriminatorConfig& cfg, std::size_t iter, std::size_t total_iters,
                 std::size_t warmup_iters);

}  // namespace homofm::model
