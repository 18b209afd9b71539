#pragma once

// Synthetic homography pairs: a procedural base image, a random 4-corner
// perturbation, the warped and domain-shifted target, and the ground-truth
// displacement on the stride-4 feature grid.

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "homofm/data/rng.hpp"
#include "homofm/data/synth.hpp"
#include "homofm/geometry/homography.hpp"
#include "homofm/tensor/tensor.hpp"

namespace homofm::data {

/// Stride of the working displacement grid relative to the image.
inline constexpr std::size_t kGridStride = 4;

struct GenConfig {
  std::size_t image_side = 64;
  double rho = 8.0;
  DomainShift shift{};
  PatternKind pattern = PatternKind::kBlobs;
  std::size_t checker_cell = kDefaultCheckerCell;
  std::uint64_t seed = 0;

  /// side > 0 and divisible by 8, 0 <= rho < side / 4. Throws ConfigError.
  void validate() const;
  geometry::GridShape grid() const;

  bool operator==(const GenConfig&) const = default;
};

struct PairSample {
  Tensor<float> source;  // i_s, [3 x S x S]
  Tensor<float> target;  // i_t, [3 x S x S]
  geometry::Homography h_gt;  // pixels, source -> target
  Tensor<float> w_gt;         // [2 x S/4 x S/4], grid units
  int domain_source = 0;
  int domain_target = 1;
};

/// Image-corner set and iid offsets uniform in [-rho, rho]^2. Draws that
/// make the quad non-convex or nearly degenerate are redrawn; after 100
/// failures GenerationError is thrown.
std::pair<geometry::CornerSet, geometry::CornerOffsets> perturb_corners(std::size_t side,
                                                                        double rho, Rng& rng);

/// Ground-truth displacement of `h_pixels` on the stride-4 grid of a
/// side x side image, in grid units: w(g) = H_grid(g) - g.
Tensor<float> ground_truth_field(const geometry::Homography& h_pixels, std::size_t side);

PairSample generate_pair(const Tensor<float>& base, const GenConfig& cfg, Rng& rng);

/// Sample `index` of the dataset defined by cfg; depends only on
/// (cfg, index).
PairSample generate_sample(const GenConfig& cfg, std::uint64_t index);

std::vector<PairSample> generate_dataset(const GenConfig& cfg, std::size_t count,
                                         std::uint64_t first_index = 0);

}  // namespace homofm::data
