#pragma once

// Projective geometry on the image plane. Coordinates are (x, y) with x to
// the right, y down, and pixel centers on integer coordinates.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "homofm/tensor/tensor.hpp"

namespace homofm::geometry {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
double distance(Point2 a, Point2 b);

/// 3x3 projective transform held in canonical form: unit Frobenius norm and
/// m(2,2) >= 0 (when m(2,2) == 0 the first non-zero entry is positive).
class Homography {
 public:
  /// Identity.
  Homography();

  /// Normalizes `m`; throws DegeneracyError if the result is singular
  /// (|det| <= 1e-12).
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography translation(double tx, double ty);

  /// Restores a matrix that is already in canonical form without
  /// renormalizing, so stored homographies round-trip bit-exactly. Throws
  /// DegeneracyError if `m` is not canonical to 1e-12 or is singular.
  static Homography from_canonical(const Eigen::Matrix3d& m);

  /// Parses 9 whitespace-separated decimals, row-major.
  static Homography from_text(const std::string& text);

  const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  Homography inverse() const;

  /// this ∘ first: applies `first`, then this.
  Homography after(const Homography& first) const;

  /// Throws DegeneratePointError (index 0) if the point maps to infinity.
  Point2 apply(Point2 p) const;

  /// 9 decimals, row-major, space separated.
  std::string to_text() const;

 private:
  Eigen::Matrix3d m_;
};

/// Canonical representative of the projective class of m.
Eigen::Matrix3d canonicalize(const Eigen::Matrix3d& m);

/// Frobenius distance between canonical forms, relative to the (unit) norm.
double canonical_relative_error(const Homography& a, const Homography& b);

/// Maps each point; the error names the first degenerate point.
std::vector<Point2> apply_homography(const Homography& h, std::span<const Point2> pts);

/// Normalized DLT: Hartley conditioning of both point sets, SVD null vector
/// of the stacked 2n x 9 system, deconditioning. Needs n >= 4; throws
/// DegeneracyError when the system has rank < 8 or (for the minimal case)
/// three source or target points are collinear.
Homography dlt_from_correspondences(std::span<const Point2> src, std::span<const Point2> dst);

/// Corners in the fixed order top-left, top-right, bottom-right, bottom-left.
using CornerSet = std::array<Point2, 4>;
using CornerOffsets = std::array<Point2, 4>;

/// Pixel-center corners of a width x height image.
CornerSet image_corners(std::size_t width, std::size_t height);

Homography four_point_to_homography(const CornerSet& corners, const CornerOffsets& offsets);

struct GridShape {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const GridShape&) const = default;
};

/// Per-grid-point displacement w(y, x) in grid coordinates, stored
/// interleaved (x, y).
class DisplacementField {
 public:
  DisplacementField() = default;
  explicit DisplacementField(GridShape shape);
  DisplacementField(GridShape shape, std::vector<double> values);

  GridShape shape() const noexcept { return shape_; }
  Point2 at(std::size_t y, std::size_t x) const;
  void set(std::size_t y, std::size_t x, Point2 v);
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  /// Channels-first [2 x H x W] tensor.
  template <typename T>
  Tensor<T> to_tensor() const;
  /// Accepts [2 x H x W].
  template <typename T>
  static DisplacementField from_tensor(const Tensor<T>& t);

 private:
  GridShape shape_;
  std::vector<double> values_;
};

/// w(y, x) = h(x, y) - (x, y) at every grid point.
DisplacementField displacement_from_homography(const Homography& h, GridShape shape);

/// Unweighted normalized DLT over all correspondences (x, y) -> (x, y) + w.
Homography fit_homography_from_displacement(const DisplacementField& w);

/// Inverse-mapped warp: out(p) = img(h^-1 p), bilinear, zero outside.
/// img is [C x H x W].
template <typename T>
Tensor<T> warp_image(const Tensor<T>& img, const Homography& h);

/// Mean Euclidean distance between the images of `corners` under the two
/// homographies.
double average_corner_error(const Homography& pred, const Homography& gt, const CornerSet& corners);

/// Affine relation between a regular feature grid and pixel coordinates:
/// pixel = stride * grid + offset.
struct GridFrame {
  double stride = 4.0;
  double offset = 1.5;

  /// Frame of a stride-s feature map whose cells cover s x s pixel blocks.
  static GridFrame for_stride(std::size_t stride);

  Eigen::Matrix3d grid_to_pixels() const;
  Homography to_grid(const Homography& pixel_h) const;
  Homography to_pixels(const Homography& grid_h) const;
};

}  // namespace homofm::geometry
