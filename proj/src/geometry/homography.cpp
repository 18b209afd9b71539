#include "homofm/geometry/homography.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "homofm/error.hpp"
#include "homofm/tensor/ops.hpp"

namespace homofm::geometry {

namespace {

constexpr double kDetTolerance = 1e-12;
constexpr double kDenominatorTolerance = 1e-12;
constexpr double kRankTolerance = 1e-10;

// Similarity moving the centroid to the origin with mean distance sqrt(2).
Eigen::Matrix3d hartley_conditioner(std::span<const Point2> pts) {
  double cx = 0.0, cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += std::hypot(p.x - cx, p.y - cy);
  mean_dist /= static_cast<double>(pts.size());
  if (!(mean_dist > 0.0) || !std::isfinite(mean_dist)) {
    throw DegeneracyError("DLT: point set has no spatial extent");
  }
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0;
  return t;
}

Point2 transform(const Eigen::Matrix3d& t, Point2 p) {
  const Eigen::Vector3d q = t * Eigen::Vector3d(p.x, p.y, 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

bool any_three_collinear(std::span<const Point2> pts) {
  double scale = 0.0;
  for (const auto& a : pts) {
    for (const auto& b : pts) scale = std::max(scale, distance(a, b));
  }
  if (scale == 0.0) return true;
  const double tol = 1e-9 * scale * scale;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      for (std::size_t k = j + 1; k < pts.size(); ++k) {
        const Point2 u = pts[j] - pts[i];
        const Point2 v = pts[k] - pts[i];
        if (std::abs(u.x * v.y - u.y * v.x) <= tol) return true;
      }
    }
  }
  return false;
}

}  // namespace

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

Eigen::Matrix3d canonicalize(const Eigen::Matrix3d& m) {
  const double norm = m.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DegeneracyError("homography matrix has zero or non-finite norm");
  }
  Eigen::Matrix3d c = m / norm;
  double sign_ref = c(2, 2);
  if (sign_ref == 0.0) {
    for (int i = 0; i < 9 && sign_ref == 0.0; ++i) sign_ref = c(i / 3, i % 3);
  }
  if (sign_ref < 0.0) c = -c;
  return c;
}

Homography::Homography() : m_(canonicalize(Eigen::Matrix3d::Identity())) {}

Homography::Homography(const Eigen::Matrix3d& m) : m_(canonicalize(m)) {
  const double det = m_.determinant();
  if (!(std::abs(det) > kDetTolerance)) {
    std::ostringstream os;
    os << "homography is singular (normalized det = " << det << ")";
    throw DegeneracyError(os.str());
  }
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

Homography Homography::from_canonical(const Eigen::Matrix3d& m) {
  const Homography h(m);
  if (!((h.m_ - m).cwiseAbs().maxCoeff() <= 1e-12)) {
    throw DegeneracyError("matrix is not in canonical form");
  }
  Homography out = h;
  out.m_ = m;
  return out;
}

Homography Homography::from_text(const std::string& text) {
  std::istringstream is(text);
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) {
    if (!(is >> m(i / 3, i % 3))) throw ConfigError("homography text needs 9 decimals: " + text);
  }
  std::string rest;
  if (is >> rest) throw ConfigError("trailing data after 9 homography values: " + rest);
  return Homography(m);
}

Homography Homography::inverse() const { return Homography(m_.inverse()); }

Homography Homography::after(const Homography& first) const { return Homography(m_ * first.m_); }

Point2 Homography::apply(Point2 p) const {
  const double den = m_(2, 0) * p.x + m_(2, 1) * p.y + m_(2, 2);
  if (!(std::abs(den) > kDenominatorTolerance)) throw DegeneratePointError(0, p.x, p.y);
  return {(m_(0, 0) * p.x + m_(0, 1) * p.y + m_(0, 2)) / den,
          (m_(1, 0) * p.x + m_(1, 1) * p.y + m_(1, 2)) / den};
}

std::string Homography::to_text() const {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int i = 0; i < 9; ++i) {
    if (i) os << ' ';
    os << m_(i / 3, i % 3);
  }
  return os.str();
}

double canonical_relative_error(const Homography& a, const Homography& b) {
  return (a.matrix() - b.matrix()).norm() / b.matrix().norm();
}

std::vector<Point2> apply_homography(const Homography& h, std::span<const Point2> pts) {
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    try {
      out.push_back(h.apply(pts[i]));
    } catch (const DegeneratePointError&) {
      throw DegeneratePointError(i, pts[i].x, pts[i].y);
    }
  }
  return out;
}

Homography dlt_from_correspondences(std::span<const Point2> src, std::span<const Point2> dst) {
  if (src.size() != dst.size()) {
    throw DegeneracyError("DLT: " + std::to_string(src.size()) + " source vs " +
                          std::to_string(dst.size()) + " target points");
  }
  const std::size_t n = src.size();
  if (n < 4) throw DegeneracyError("DLT: needs at least 4 correspondences, got " + std::to_string(n));
  if (n == 4 && (any_three_collinear(src) || any_three_collinear(dst))) {
    throw DegeneracyError("DLT: three of the four points are collinear");
  }

  const Eigen::Matrix3d ts = hartley_conditioner(src);
  const Eigen::Matrix3d td = hartley_conditioner(dst);

  Eigen::Matrix<double, Eigen::Dynamic, 9> a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 s = transform(ts, src[i]);
    const Point2 d = transform(td, dst[i]);
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -s.x, -s.y, -1.0, 0.0, 0.0, 0.0, d.x * s.x, d.x * s.y, d.x;
    a.row(r + 1) << 0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y;
  }

  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 9>> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 8 || !(sv(7) > kRankTolerance * sv(0))) {
    throw DegeneracyError("DLT: correspondence system has rank < 8");
  }
  const Eigen::Matrix<double, 9, 1> hvec = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), hvec(8);
  return Homography(td.inverse() * hn * ts);
}

CornerSet image_corners(std::size_t width, std::size_t height) {
  const double r = static_cast<double>(width) - 1.0;
  const double b = static_cast<double>(height) - 1.0;
  return {Point2{0.0, 0.0}, Point2{r, 0.0}, Point2{r, b}, Point2{0.0, b}};
}

Homography four_point_to_homography(const CornerSet& corners, const CornerOffsets& offsets) {
  // Equal offsets are a pure translation; build it exactly so rho = 0 data
  // carries the identity rather than a DLT round-off of it.
  const bool uniform = std::all_of(offsets.begin(), offsets.end(), [&](const Point2& d) {
    return d.x == offsets[0].x && d.y == offsets[0].y;
  });
  if (uniform) return Homography::translation(offsets[0].x, offsets[0].y);
  CornerSet moved;
  for (std::size_t i = 0; i < 4; ++i) moved[i] = corners[i] + offsets[i];
  return dlt_from_correspondences(corners, moved);
}

DisplacementField::DisplacementField(GridShape shape)
    : shape_(shape), values_(shape.height * shape.width * 2, 0.0) {}

DisplacementField::DisplacementField(GridShape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape.height * shape.width * 2) {
    throw ShapeError("displacement field values do not match grid " +
                     std::to_string(shape.height) + "x" + std::to_string(shape.width));
  }
}

Point2 DisplacementField::at(std::size_t y, std::size_t x) const {
  const std::size_t i = (y * shape_.width + x) * 2;
  return {values_[i], values_[i + 1]};
}

void DisplacementField::set(std::size_t y, std::size_t x, Point2 v) {
  const std::size_t i = (y * shape_.width + x) * 2;
  values_[i] = v.x;
  values_[i + 1] = v.y;
}

template <typename T>
Tensor<T> DisplacementField::to_tensor() const {
  const std::size_t hw = shape_.height * shape_.width;
  std::vector<T> data(2 * hw);
  for (std::size_t p = 0; p < hw; ++p) {
    data[p] = static_cast<T>(values_[2 * p]);
    data[hw + p] = static_cast<T>(values_[2 * p + 1]);
  }
  return Tensor<T>(Shape{2, shape_.height, shape_.width}, std::move(data));
}

template <typename T>
DisplacementField DisplacementField::from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 2) {
    throw ShapeError("displacement tensor must be [2 x H x W], got " + shape_to_string(t.shape()));
  }
  const GridShape shape{t.dim(1), t.dim(2)};
  const std::size_t hw = shape.height * shape.width;
  std::vector<double> values(2 * hw);
  for (std::size_t p = 0; p < hw; ++p) {
    values[2 * p] = static_cast<double>(t[p]);
    values[2 * p + 1] = static_cast<double>(t[hw + p]);
  }
  return DisplacementField(shape, std::move(values));
}

DisplacementField displacement_from_homography(const Homography& h, GridShape shape) {
  DisplacementField w(shape);
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      Point2 q;
      try {
        q = h.apply(p);
      } catch (const DegeneratePointError&) {
        throw DegeneratePointError(y * shape.width + x, p.x, p.y);
      }
      w.set(y, x, q - p);
    }
  }
  return w;
}

Homography fit_homography_from_displacement(const DisplacementField& w) {
  const GridShape shape = w.shape();
  if (shape.height < 2 || shape.width < 2) {
    throw DegeneracyError("displacement fit needs a grid of at least 2x2");
  }
  std::vector<Point2> src, dst;
  src.reserve(shape.height * shape.width);
  dst.reserve(shape.height * shape.width);
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      const Point2 d = w.at(y, x);
      if (!std::isfinite(d.x) || !std::isfinite(d.y)) {
        throw DegeneracyError("displacement field is not finite at grid point (" +
                              std::to_string(x) + ", " + std::to_string(y) + ")");
      }
      src.push_back(p);
      dst.push_back(p + d);
    }
  }
  return dlt_from_correspondences(src, dst);
}

template <typename T>
Tensor<T> warp_image(const Tensor<T>& img, const Homography& h) {
  if (img.rank() != 3) throw ShapeError("warp_image expects [C x H x W], got " + shape_to_string(img.shape()));
  const std::size_t height = img.dim(1), width = img.dim(2);
  const Eigen::Matrix3d inv = h.inverse().matrix();
  std::vector<T> coords(height * width * 2);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double xd = static_cast<double>(x), yd = static_cast<double>(y);
      const double den = inv(2, 0) * xd + inv(2, 1) * yd + inv(2, 2);
      double sx = std::numeric_limits<double>::quiet_NaN(), sy = sx;  // reads zero
      if (std::abs(den) > kDenominatorTolerance) {
        sx = (inv(0, 0) * xd + inv(0, 1) * yd + inv(0, 2)) / den;
        sy = (inv(1, 0) * xd + inv(1, 1) * yd + inv(1, 2)) / den;
      }
      // Snap round-off around lattice points so exact maps stay bit-exact.
      const double rx = std::round(sx), ry = std::round(sy);
      if (std::abs(sx - rx) < 1e-9) sx = rx;
      if (std::abs(sy - ry) < 1e-9) sy = ry;
      coords[(y * width + x) * 2] = static_cast<T>(sx);
      coords[(y * width + x) * 2 + 1] = static_cast<T>(sy);
    }
  }
  NoGradScope<T> no_grad;
  return ops::bilinear_sample(img, Tensor<T>(Shape{height, width, 2}, std::move(coords)));
}

double average_corner_error(const Homography& pred, const Homography& gt, const CornerSet& corners) {
  const auto a = apply_homography(pred, corners);
  const auto b = apply_homography(gt, corners);
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) s += distance(a[i], b[i]);
  return s / 4.0;
}

GridFrame GridFrame::for_stride(std::size_t stride) {
  const double s = static_cast<double>(stride);
  return {s, (s - 1.0) / 2.0};
}

Eigen::Matrix3d GridFrame::grid_to_pixels() const {
  Eigen::Matrix3d s;
  s << stride, 0.0, offset, 0.0, stride, offset, 0.0, 0.0, 1.0;
  return s;
}

Homography GridFrame::to_grid(const Homography& pixel_h) const {
  const Eigen::Matrix3d s = grid_to_pixels();
  return Homography(s.inverse() * pixel_h.matrix() * s);
}

Homography GridFrame::to_pixels(const Homography& grid_h) const {
  const Eigen::Matrix3d s = grid_to_pixels();
  return Homography(s * grid_h.matrix() * s.inverse());
}

template Tensor<float> DisplacementField::to_tensor<float>() const;
template Tensor<double> DisplacementField::to_tensor<double>() const;
template DisplacementField DisplacementField::from_tensor<float>(const Tensor<float>&);
template DisplacementField DisplacementField::from_tensor<double>(const Tensor<double>&);
template Tensor<float> warp_image<float>(const Tensor<float>&, const Homography&);
template Tensor<double> warp_image<double>(const Tensor<double>&, const Homography&);

}  // namespace homofm::geometry
