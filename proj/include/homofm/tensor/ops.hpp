#pragma once

// Differentiable tensor operations. Each op allocates its output and, when a
// GradTape is active on the calling thread and any input requires a
// gradient, records its backward rule on that tape.
//
// Binary elementwise ops broadcast `b` against `a`: both must have the same
// rank and every extent of `b` must equal the matching extent of `a` or be 1.
// The output always has the shape of `a`.

#include <cstddef>
#include <span>
#include <vector>

#include "homofm/tensor/tensor.hpp"

namespace homofm::ops {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
/// Throws DomainError on any non-positive input.
template <typename T>
Tensor<T> log(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
/// Throws DomainError on any negative input.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& a);
/// Gradient passes where lo <= a <= hi, zero elsewhere.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

/// Reductions to a one-element tensor of shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// Reduction over one axis, keeping it with extent 1.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis);

/// Euclidean norm over `axis` (kept with extent 1). The gradient at an
/// exactly-zero norm is taken to be zero.
template <typename T>
Tensor<T> l2_norm(const Tensor<T>& a, std::size_t axis);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

/// [m x k] * [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Cross-correlation with zero padding.
///   input  [B x C x H x W], kernel [O x C x kh x kw], bias [O] or undefined.
/// kh and kw must be odd.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);

/// Bilinear interpolation of `image` at `coords` (x right, y down, pixel
/// centers on integers). Samples falling outside the image read zero.
///   image [B x C x H x W], coords [B x h x w x 2] -> [B x C x h x w]
///   image [C x H x W],     coords [h x w x 2]     -> [C x h x w]
/// Differentiable with respect to both image values and coordinates.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& image, const Tensor<T>& coords);

/// Identity forward; backward multiplies the upstream gradient by -alpha.
template <typename T>
Tensor<T> grad_reverse(const Tensor<T>& x, T alpha);

/// [B x C x H x W] -> [B x C], mean over space.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Non-overlapping k x k mean pooling; H and W must be divisible by k.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k);

/// Bilinear resize of [B x C x H x W] by an integer factor (half-pixel
/// aligned, edge-clamped).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor);

}  // namespace homofm::ops
