#include "homofm/data/pairs.hpp"

#include <cmath>

#include "homofm/error.hpp"

namespace homofm::data {

using geometry::CornerOffsets;
using geometry::CornerSet;
using geometry::Homography;
using geometry::Point2;

namespace {

double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }

// Strictly convex with every corner turn above a fraction of the original
// square's turn.
bool well_shaped(const CornerSet& q, double side) {
  const double min_turn = 0.05 * (side - 1.0) * (side - 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const Point2 e0 = q[(i + 1) % 4] - q[i];
    const Point2 e1 = q[(i + 2) % 4] - q[(i + 1) % 4];
    if (cross(e0, e1) < min_turn) return false;
  }
  return true;
}

}  // namespace

void GenConfig::validate() const {
  if (image_side == 0 || image_side % 8 != 0) {
    throw ConfigError("image_side must be a positive multiple of 8, got " +
                      std::to_string(image_side));
  }
  if (!(rho >= 0.0) || !(rho < static_cast<double>(image_side) / 4.0)) {
    throw ConfigError("rho must satisfy 0 <= rho < image_side / 4, got " + std::to_string(rho));
  }
  if (shift.mode == ShiftMode::kGamma && !(shift.gamma > 0.0)) {
    throw ConfigError("gamma must be positive");
  }
  if (checker_cell == 0) throw ConfigError("checker_cell must be positive");
}

geometry::GridShape GenConfig::grid() const {
  return {image_side / kGridStride, image_side / kGridStride};
}

std::pair<CornerSet, CornerOffsets> perturb_corners(std::size_t side, double rho, Rng& rng) {
  if (!(rho >= 0.0)) throw DomainError("rho must be non-negative");
  const CornerSet corners = geometry::image_corners(side, side);
  constexpr int kMaxTries = 100;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    CornerOffsets offsets{};
    CornerSet moved{};
    for (std::size_t i = 0; i < 4; ++i) {
      offsets[i] = {rng.uniform(-rho, rho), rng.uniform(-rho, rho)};
      moved[i] = corners[i] + offsets[i];
    }
    if (well_shaped(moved, static_cast<double>(side))) return {corners, offsets};
  }
  throw GenerationError("no well-shaped quad after 100 draws; rho " + std::to_string(rho) +
                        " is too large for side " + std::to_string(side));
}

Tensor<float> ground_truth_field(const Homography& h_pixels, std::size_t side) {
  const auto frame = geometry::GridFrame::for_stride(kGridStride);
  const geometry::GridShape grid{side / kGridStride, side / kGridStride};
  return geometry::displacement_from_homography(frame.to_grid(h_pixels), grid)
      .to_tensor<float>();
}

PairSample generate_pair(const Tensor<float>& base, const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t side = cfg.image_side;
  if (base.rank() != 3 || base.dim(1) != side || base.dim(2) != side) {
    throw ShapeError("base image " + shape_to_string(base.shape()) + " does not match side " +
                     std::to_string(side));
  }
  const auto [corners, offsets] = perturb_corners(side, cfg.rho, rng);
  Homography h;
  try {
    h = geometry::four_point_to_homography(corners, offsets);
  } catch (const DegeneracyError& e) {
    throw GenerationError(std::string("degenerate corner draw: ") + e.what());
  }
  PairSample s;
  s.source = base;
  s.target = apply_domain_shift(geometry::warp_image(base, h), cfg.shift);
  s.h_gt = h;
  s.w_gt = ground_truth_field(h, side);
  return s;
}

PairSample generate_sample(const GenConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).split(index);
  const Tensor<float> base = synth_pattern(cfg.image_side, cfg.pattern, rng, cfg.checker_cell);
  return generate_pair(base, cfg, rng);
}

std::vector<PairSample> generate_dataset(const GenConfig& cfg, std::size_t count,
                                         std::uint64_t first_index) {
  std::vector<PairSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(cfg, first_index + i));
  return out;
}

}  // namespace homofm::data
