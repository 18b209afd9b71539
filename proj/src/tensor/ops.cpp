#include "homofm/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "homofm/error.hpp"
#include "homofm/simd/kernels.hpp"

namespace homofm::ops {

namespace {

using detail::NodePtr;

template <typename T>
GradTape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  GradTape<T>* tape = GradTape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
bool wants_grad(const NodePtr<T>& n) {
  return n && n->requires_grad;
}

// Walks every element of `a_shape`, passing (flat index into a, flat index
// into the broadcast operand b).
template <typename F>
void for_each_broadcast(const Shape& a_shape, const Shape& b_shape, F&& f) {
  const std::size_t rank = a_shape.size();
  const std::size_t n = shape_numel(a_shape);
  if (a_shape == b_shape) {
    for (std::size_t i = 0; i < n; ++i) f(i, i);
    return;
  }
  std::vector<std::size_t> b_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t d = rank; d-- > 0;) {
    b_stride[d] = (b_shape[d] == 1) ? 0 : s;
    s *= b_shape[d];
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, j);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      j += b_stride[d];
      if (idx[d] < a_shape[d]) break;
      j -= b_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
}

void check_broadcast(const Shape& a, const Shape& b, const char* op) {
  bool ok = a.size() == b.size();
  for (std::size_t d = 0; ok && d < a.size(); ++d) ok = (b[d] == a[d] || b[d] == 1);
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(b) + " onto " +
                     shape_to_string(a));
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
  check_broadcast(a.shape(), b.shape(), name);
  std::vector<T> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  switch (kind) {
    case BinaryKind::kAdd:
      for_each_broadcast(a.shape(), b.shape(), [&](std::size_t i, std::size_t j) { out[i] = ad[i] + bd[j]; });
      break;
    case BinaryKind::kSub:
      for_each_broadcast(a.shape(), b.shape(), [&](std::size_t i, std::size_t j) { out[i] = ad[i] - bd[j]; });
      break;
    case BinaryKind::kMul:
      for_each_broadcast(a.shape(), b.shape(), [&](std::size_t i, std::size_t j) { out[i] = ad[i] * bd[j]; });
      break;
  }
  GradTape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> result(a.shape(), std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> an = a.node(), bn = b.node(), on = result.node();
    tape->record(name, {an, bn}, on, [an, bn, on, kind] {
      const auto& g = on->grad;
      if (wants_grad(an)) {
        an->ensure_grad();
        if (kind == BinaryKind::kMul) {
          for_each_broadcast(an->shape, bn->shape,
                             [&](std::size_t i, std::size_t j) { an->grad[i] += g[i] * bn->data[j]; });
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
        }
      }
      if (wants_grad(bn)) {
        bn->ensure_grad();
        const T sign = (kind == BinaryKind::kSub) ? T{-1} : T{1};
        if (kind == BinaryKind::kMul) {
          for_each_broadcast(an->shape, bn->shape,
                             [&](std::size_t i, std::size_t j) { bn->grad[j] += g[i] * an->data[i]; });
        } else {
          for_each_broadcast(an->shape, bn->shape,
                             [&](std::size_t i, std::size_t j) { bn->grad[j] += sign * g[i]; });
        }
      }
    });
  }
  return result;
}

// Unary op whose local derivative depends on input and output values.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& a, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<T> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i]);
  GradTape<T>* tape = recording_tape<T>({&a});
  Tensor<T> result(a.shape(), std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> an = a.node(), on = result.node();
    tape->record(name, {an}, on, [an, on, deriv] {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        an->grad[i] += on->grad[i] * deriv(an->data[i], on->data[i]);
      }
    });
  }
  return result;
}

std::size_t outer_extent(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t d = 0; d < axis; ++d) n *= s[d];
  return n;
}

std::size_t inner_extent(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t d = axis + 1; d < s.size(); ++d) n *= s[d];
  return n;
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(s));
  }
}

// Output columns [lo, hi) whose input column ox * stride + k - pad lies in [0, w).
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t k, std::size_t pad,
                                                      std::size_t stride, std::size_t w,
                                                      std::size_t wo) {
  const std::size_t lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const std::size_t hi = w + pad <= k ? 0 : std::min(wo, (w + pad - k + stride - 1) / stride);
  return {std::min(lo, hi), hi};
}

template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* cols) {
  const std::size_t hw = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((ch * kh + ki) * kw + kj) * hw;
        const auto [lo, hi] = valid_span(kj, pad, stride, w, wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill_n(dst, wo, T{0});
            continue;
          }
          const T* src = x + (ch * h + static_cast<std::size_t>(iy)) * w;
          std::fill(dst, dst + lo, T{0});
          if (lo < hi && stride == 1) {
            std::copy_n(src + (lo + kj - pad), hi - lo, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride + kj - pad];
          }
          std::fill(dst + hi, dst + wo, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho,
                std::size_t wo, T* x) {
  const std::size_t hw = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((ch * kh + ki) * kw + kj) * hw;
        const auto [lo, hi] = valid_span(kj, pad, stride, w, wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          T* dst = x + (ch * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride + kj - pad] += src[ox];
        }
      }
    }
  }
}

template <typename T>
simd::ConstMatrixView<T> cview(const T* p, std::size_t r, std::size_t c) {
  return {p, r, c, c};
}

template <typename T>
simd::MatrixView<T> mview(T* p, std::size_t r, std::size_t c) {
  return {p, r, c, c};
}

struct Corner {
  long x0, y0;
  double fx, fy;
};

template <typename T>
Corner locate(T x, T y) {
  const double xd = static_cast<double>(x);
  const double yd = static_cast<double>(y);
  if (!std::isfinite(xd) || !std::isfinite(yd)) return {-4, -4, 0.0, 0.0};
  // Far outside: every tap reads zero; clamp before the integer cast.
  const double fx0 = std::floor(std::clamp(xd, -4.0, 1e9));
  const double fy0 = std::floor(std::clamp(yd, -4.0, 1e9));
  return {static_cast<long>(fx0), static_cast<long>(fy0), xd - std::floor(xd), yd - std::floor(yd)};
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(
      a, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary(
      a, "add_scalar", [value](T v) { return v + value; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, "relu", [](T v) { return v > T{0} ? v : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a, "sigmoid",
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!(a[i] > T{0})) {
      throw DomainError("log of non-positive value " + std::to_string(a[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return unary(
      a, "log", [](T v) { return std::log(v); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(
      a, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a[i] < T{0}) {
      throw DomainError("sqrt of negative value " + std::to_string(a[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return unary(
      a, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T{0.5} / y; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary(
      a, "clamp", [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s{0};
  for (T v : a.data()) s += v;
  GradTape<T>* tape = recording_tape<T>({&a});
  Tensor<T> result(Shape{1}, {s}, tape != nullptr);
  if (tape) {
    NodePtr<T> an = a.node(), on = result.node();
    tape->record("sum", {an}, on, [an, on] {
      an->ensure_grad();
      for (T& g : an->grad) g += on->grad[0];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
  check_axis(a.shape(), axis, "sum_axis");
  const std::size_t outer = outer_extent(a.shape(), axis);
  const std::size_t inner = inner_extent(a.shape(), axis);
  const std::size_t n = a.dim(axis);
  Shape out_shape = a.shape();
  out_shape[axis] = 1;
  std::vector<T> out(outer * inner, T{0});
  const auto ad = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += ad[(o * n + k) * inner + i];
    }
  }
  GradTape<T>* tape = recording_tape<T>({&a});
  Tensor<T> result(std::move(out_shape), std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> an = a.node(), on = result.node();
    tape->record("sum_axis", {an}, on, [an, on, outer, inner, n] {
      an->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
          for (std::size_t i = 0; i < inner; ++i) {
            an->grad[(o * n + k) * inner + i] += on->grad[o * inner + i];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> l2_norm(const Tensor<T>& a, std::size_t axis) {
  check_axis(a.shape(), axis, "l2_norm");
  const std::size_t outer = outer_extent(a.shape(), axis);
  const std::size_t inner = inner_extent(a.shape(), axis);
  const std::size_t n = a.dim(axis);
  Shape out_shape = a.shape();
  out_shape[axis] = 1;
  std::vector<T> out(outer * inner, T{0});
  const auto ad = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < inner; ++i) {
        const T v = ad[(o * n + k) * inner + i];
        out[o * inner + i] += v * v;
      }
    }
  }
  for (T& v : out) v = std::sqrt(v);
  GradTape<T>* tape = recording_tape<T>({&a});
  Tensor<T> result(std::move(out_shape), std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> an = a.node(), on = result.node();
    tape->record("l2_norm", {an}, on, [an, on, outer, inner, n] {
      an->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const T norm = on->data[o * inner + i];
          if (norm == T{0}) continue;
          const T g = on->grad[o * inner + i] / norm;
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = (o * n + k) * inner + i;
            an->grad[idx] += g * an->data[idx];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  check_axis(first, axis, "concat");
  std::size_t total = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == first.size();
    for (std::size_t d = 0; ok && d < first.size(); ++d) ok = (d == axis || p.dim(d) == first[d]);
    if (!ok) {
      throw ShapeError("concat: " + shape_to_string(p.shape()) + " incompatible with " +
                       shape_to_string(first) + " along axis " + std::to_string(axis));
    }
    total += p.dim(axis);
  }
  const std::size_t outer = outer_extent(first, axis);
  const std::size_t inner = inner_extent(first, axis);
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t block = p.dim(axis) * inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.data() + o * block, block, out.data() + o * total * inner + off * inner);
    }
    off += p.dim(axis);
  }
  GradTape<T>* tape = GradTape<T>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!any) tape = nullptr;
  Tensor<T> result(std::move(out_shape), std::move(out), tape != nullptr);
  if (tape) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    NodePtr<T> on = result.node();
    tape->record("concat", nodes, on, [nodes, on, offsets, outer, inner, total] {
      for (std::size_t q = 0; q < nodes.size(); ++q) {
        const auto& pn = nodes[q];
        if (!wants_grad(pn)) continue;
        pn->ensure_grad();
        const std::size_t len = pn->data.size() / outer;
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = on->grad.data() + o * total * inner + offsets[q] * inner;
          T* dst = pn->grad.data() + o * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  const Tensor<T> parts[2] = {a, b};
  return concat<T>(std::span<const Tensor<T>>(parts, 2), axis);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_to_string(a.shape()) + " -> " + shape_to_string(shape));
  }
  GradTape<T>* tape = recording_tape<T>({&a});
  Tensor<T> result(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()),
                   tape != nullptr);
  if (tape) {
    NodePtr<T> an = a.node(), on = result.node();
    tape->record("reshape", {an}, on, [an, on] {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  check_axis(a.shape(), axis, "slice");
  if (begin >= end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_to_string(a.shape()));
  }
  const std::size_t outer = outer_extent(a.shape(), axis);
  const std::size_t inner = inner_extent(a.shape(), axis);
  const std::size_t n = a.dim(axis);
  const std::size_t len = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  const auto ad = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ad.data() + (o * n + begin) * inner, len * inner, out.data() + o * len * inner);
  }
  GradTape<T>* tape = recording_tape<T>({&a});
  Tensor<T> result(std::move(out_shape), std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> an = a.node(), on = result.node();
    tape->record("slice", {an}, on, [an, on, outer, inner, n, begin, len] {
      an->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = on->grad.data() + o * len * inner;
        T* dst = an->grad.data() + (o * n + begin) * inner;
        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  simd::gemm(cview(a.data().data(), m, k), cview(b.data().data(), k, n), mview(out.data(), m, n),
             false);
  GradTape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> result(Shape{m, n}, std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> an = a.node(), bn = b.node(), on = result.node();
    tape->record("matmul", {an, bn}, on, [an, bn, on, m, k, n] {
      if (wants_grad(an)) {  // dA = dC * B^T
        an->ensure_grad();
        simd::gemm(cview(on->grad.data(), m, n), cview(bn->data.data(), k, n),
                   mview(an->grad.data(), m, k), true, {false, true});
      }
      if (wants_grad(bn)) {  // dB = A^T * dC
        bn->ensure_grad();
        simd::gemm(cview(an->data.data(), m, k), cview(on->grad.data(), m, n),
                   mview(bn->grad.data(), k, n), true, {true, false});
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: input " + shape_to_string(input.shape()) + " vs kernel " +
                     shape_to_string(kernel.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_to_string(kernel.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) + " for " +
                     std::to_string(o) + " output channels");
  }
  const long hp = static_cast<long>(h + 2 * pad) - static_cast<long>(kh);
  const long wp = static_cast<long>(w + 2 * pad) - static_cast<long>(kw);
  if (hp < 0 || wp < 0) {
    throw ShapeError("conv2d: non-positive output extent for input " +
                     shape_to_string(input.shape()) + " and kernel " +
                     shape_to_string(kernel.shape()));
  }
  const std::size_t ho = static_cast<std::size_t>(hp) / stride + 1;
  const std::size_t wo = static_cast<std::size_t>(wp) / stride + 1;
  const std::size_t ckk = c * kh * kw;
  const std::size_t hw = ho * wo;

  std::vector<T> out(batch * o * hw);
  std::vector<T> cols(ckk * hw);
  const T* xd = input.data().data();
  const T* wd = kernel.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(xd + b * c * h * w, c, h, w, kh, kw, stride, pad, ho, wo, cols.data());
    T* ob = out.data() + b * o * hw;
    simd::gemm(cview(wd, o, ckk), cview(cols.data(), ckk, hw), mview(ob, o, hw), false);
    if (bias.defined()) {
      for (std::size_t oc = 0; oc < o; ++oc) {
        const T bv = bias[oc];
        for (std::size_t i = 0; i < hw; ++i) ob[oc * hw + i] += bv;
      }
    }
  }

  GradTape<T>* tape = recording_tape<T>({&input, &kernel, &bias});
  Tensor<T> result(Shape{batch, o, ho, wo}, std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> xn = input.node(), kn = kernel.node(), bn = bias.node(), on = result.node();
    tape->record("conv2d", {xn, kn, bn}, on,
                 [xn, kn, bn, on, batch, c, h, w, o, kh, kw, stride, pad, ho, wo, ckk, hw] {
                   const bool gx = wants_grad(xn), gk = wants_grad(kn), gb = wants_grad(bn);
                   std::vector<T> scratch(ckk * hw);
                   if (gx) xn->ensure_grad();
                   if (gk) kn->ensure_grad();
                   if (gb) bn->ensure_grad();
                   for (std::size_t b = 0; b < batch; ++b) {
                     const T* gout = on->grad.data() + b * o * hw;
                     if (gk) {
                       // dK = dY * cols^T
                       im2col(xn->data.data() + b * c * h * w, c, h, w, kh, kw, stride, pad, ho,
                              wo, scratch.data());
                       simd::gemm(cview(gout, o, hw), cview(scratch.data(), ckk, hw),
                                  mview(kn->grad.data(), o, ckk), true, {false, true});
                     }
                     if (gx) {
                       simd::gemm(cview(kn->data.data(), o, ckk), cview(gout, o, hw),
                                  mview(scratch.data(), ckk, hw), false, {true, false});
                       col2im_add(scratch.data(), c, h, w, kh, kw, stride, pad, ho, wo,
                                  xn->grad.data() + b * c * h * w);
                     }
                     if (gb) {
                       for (std::size_t oc = 0; oc < o; ++oc) {
                         T s{0};
                         for (std::size_t i = 0; i < hw; ++i) s += gout[oc * hw + i];
                         bn->grad[oc] += s;
                       }
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& image, const Tensor<T>& coords) {
  const bool batched = image.rank() == 4;
  if (!((image.rank() == 4 && coords.rank() == 4) || (image.rank() == 3 && coords.rank() == 3))) {
    throw ShapeError("bilinear_sample: image " + shape_to_string(image.shape()) + " coords " +
                     shape_to_string(coords.shape()));
  }
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? image.dim(0) : 1;
  const std::size_t c = image.dim(off), h = image.dim(off + 1), w = image.dim(off + 2);
  const std::size_t oh = coords.dim(off), ow = coords.dim(off + 1);
  if (coords.dim(off + 2) != 2 || (batched && coords.dim(0) != batch)) {
    throw ShapeError("bilinear_sample: coords " + shape_to_string(coords.shape()) +
                     " for image " + shape_to_string(image.shape()));
  }
  const std::size_t ohw = oh * ow;
  std::vector<T> out(batch * c * ohw, T{0});
  const T* img = image.data().data();
  const T* cd = coords.data().data();
  const long lw = static_cast<long>(w), lh = static_cast<long>(h);
  auto pix = [&](const T* plane, long x, long y) -> T {
    return (x < 0 || y < 0 || x >= lw || y >= lh) ? T{0} : plane[y * lw + x];
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < ohw; ++p) {
      const Corner k = locate(cd[(b * ohw + p) * 2], cd[(b * ohw + p) * 2 + 1]);
      const T fx = static_cast<T>(k.fx), fy = static_cast<T>(k.fy);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = img + (b * c + ch) * h * w;
        const T v = (T{1} - fx) * (T{1} - fy) * pix(plane, k.x0, k.y0) +
                    fx * (T{1} - fy) * pix(plane, k.x0 + 1, k.y0) +
                    (T{1} - fx) * fy * pix(plane, k.x0, k.y0 + 1) +
                    fx * fy * pix(plane, k.x0 + 1, k.y0 + 1);
        out[(b * c + ch) * ohw + p] = v;
      }
    }
  }
  Shape out_shape = batched ? Shape{batch, c, oh, ow} : Shape{c, oh, ow};
  GradTape<T>* tape = recording_tape<T>({&image, &coords});
  Tensor<T> result(std::move(out_shape), std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> in = image.node(), cn = coords.node(), on = result.node();
    tape->record("bilinear_sample", {in, cn}, on, [in, cn, on, batch, c, h, w, ohw] {
      const bool gi = wants_grad(in), gc = wants_grad(cn);
      if (gi) in->ensure_grad();
      if (gc) cn->ensure_grad();
      const long lw = static_cast<long>(w), lh = static_cast<long>(h);
      auto inside = [&](long x, long y) { return x >= 0 && y >= 0 && x < lw && y < lh; };
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t p = 0; p < ohw; ++p) {
          const Corner k = locate(cn->data[(b * ohw + p) * 2], cn->data[(b * ohw + p) * 2 + 1]);
          const T fx = static_cast<T>(k.fx), fy = static_cast<T>(k.fy);
          const long xs[4] = {k.x0, k.x0 + 1, k.x0, k.x0 + 1};
          const long ys[4] = {k.y0, k.y0, k.y0 + 1, k.y0 + 1};
          const T wts[4] = {(T{1} - fx) * (T{1} - fy), fx * (T{1} - fy), (T{1} - fx) * fy, fx * fy};
          T gx{0}, gy{0};
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t plane = (b * c + ch) * h * w;
            const T g = on->grad[(b * c + ch) * ohw + p];
            if (g == T{0}) continue;
            T v[4];
            for (int q = 0; q < 4; ++q) {
              const bool ok = inside(xs[q], ys[q]);
              const std::size_t idx = ok ? plane + static_cast<std::size_t>(ys[q] * lw + xs[q]) : 0;
              v[q] = ok ? in->data[idx] : T{0};
              if (gi && ok) in->grad[idx] += g * wts[q];
            }
            if (gc) {
              gx += g * ((T{1} - fy) * (v[1] - v[0]) + fy * (v[3] - v[2]));
              gy += g * ((T{1} - fx) * (v[2] - v[0]) + fx * (v[3] - v[1]));
            }
          }
          if (gc) {
            cn->grad[(b * ohw + p) * 2] += gx;
            cn->grad[(b * ohw + p) * 2 + 1] += gy;
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> grad_reverse(const Tensor<T>& x, T alpha) {
  GradTape<T>* tape = recording_tape<T>({&x});
  Tensor<T> result(x.shape(), std::vector<T>(x.data().begin(), x.data().end()), tape != nullptr);
  if (tape) {
    NodePtr<T> xn = x.node(), on = result.node();
    tape->record("grad_reverse", {xn}, on, [xn, on, alpha] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += -alpha * on->grad[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected rank 4, got " + shape_to_string(x.shape()));
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(batch * c, T{0});
  const auto xd = x.data();
  for (std::size_t i = 0; i < batch * c; ++i) {
    T s{0};
    for (std::size_t p = 0; p < hw; ++p) s += xd[i * hw + p];
    out[i] = s / static_cast<T>(hw);
  }
  GradTape<T>* tape = recording_tape<T>({&x});
  Tensor<T> result(Shape{batch, c}, std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> xn = x.node(), on = result.node();
    tape->record("global_avg_pool", {xn}, on, [xn, on, hw] {
      xn->ensure_grad();
      const T inv = T{1} / static_cast<T>(hw);
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const T g = on->grad[i] * inv;
        for (std::size_t p = 0; p < hw; ++p) xn->grad[i * hw + p] += g;
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k) {
  if (x.rank() != 4 || k == 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    throw ShapeError("avg_pool2d: " + shape_to_string(x.shape()) + " not divisible by " +
                     std::to_string(k));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / k, wo = w / k;
  std::vector<T> out(planes * ho * wo, T{0});
  const auto xd = x.data();
  const T inv = T{1} / static_cast<T>(k * k);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        out[(pl * ho + y / k) * wo + xx / k] += xd[(pl * h + y) * w + xx] * inv;
      }
    }
  }
  GradTape<T>* tape = recording_tape<T>({&x});
  Tensor<T> result(Shape{x.dim(0), x.dim(1), ho, wo}, std::move(out), tape != nullptr);
  if (tape) {
    NodePtr<T> xn = x.node(), on = result.node();
    tape->record("avg_pool2d", {xn}, on, [xn, on, planes, h, w, ho, wo, k, inv] {
      xn->ensure_grad();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t xx = 0; xx < w; ++xx) {
            xn->grad[(pl * h + y) * w + xx] += on->grad[(pl * ho + y / k) * wo + xx / k] * inv;
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 4 || factor == 0) {
    throw ShapeError("upsample_bilinear: expected rank 4, got " + shape_to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<T> coords(batch * oh * ow * 2);
  const double f = static_cast<double>(factor);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double sx = std::clamp((xx + 0.5) / f - 0.5, 0.0, static_cast<double>(w - 1));
        const double sy = std::clamp((y + 0.5) / f - 0.5, 0.0, static_cast<double>(h - 1));
        const std::size_t i = ((b * oh + y) * ow + xx) * 2;
        coords[i] = static_cast<T>(sx);
        coords[i + 1] = static_cast<T>(sy);
      }
    }
  }
  return bilinear_sample(x, Tensor<T>(Shape{batch, oh, ow, 2}, std::move(coords)));
}

#define HOMOFM_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                          \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> log(const Tensor<T>&);                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                    \
  template Tensor<T> sqrt(const Tensor<T>&);                                                   \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> l2_norm(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                          \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&, std::size_t);                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                      \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> grad_reverse(const Tensor<T>&, T);                                        \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                        \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, std::size_t);

HOMOFM_INSTANTIATE_OPS(float)
HOMOFM_INSTANTIATE_OPS(double)

}  // namespace homofm::ops
