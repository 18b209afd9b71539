#include <cmath>

#include "homofm/simd/kernels.hpp"

namespace homofm::simd::scalar {

namespace {

template <typename T>
void gemm_impl(ConstMatrixView<T> a, ConstMatrixView<T> b, MatrixView<T> c, bool accumulate,
               GemmOp op) {
  const std::size_t m = op.trans_a ? a.cols : a.rows;
  const std::size_t k = op.trans_a ? a.rows : a.cols;
  const std::size_t n = op.trans_b ? b.rows : b.cols;
  auto a_at = [&](std::size_t i, std::size_t p) {
    return op.trans_a ? a.data[p * a.ld + i] : a.data[i * a.ld + p];
  };
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data + i * c.ld;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
    }
    if (op.trans_b) {
      for (std::size_t j = 0; j < n; ++j) {
        const T* bcol = b.data + j * b.ld;
        T s{0};
        for (std::size_t p = 0; p < k; ++p) s += a_at(i, p) * bcol[p];
        crow[j] += s;
      }
    } else {
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = a_at(i, p);
        const T* brow = b.data + p * b.ld;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}

}  // namespace

void gemm(ConstMatrixView<float> a, ConstMatrixView<float> b, MatrixView<float> c,
          bool accumulate, GemmOp op) {
  gemm_impl(a, b, c, accumulate, op);
}

void gemm(ConstMatrixView<double> a, ConstMatrixView<double> b, MatrixView<double> c,
          bool accumulate, GemmOp op) {
  gemm_impl(a, b, c, accumulate, op);
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double sum_squares(std::span<const float> x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

void scale(float alpha, std::span<float> x) {
  for (float& v : x) v *= alpha;
}

void adam_update(const AdamCoeffs& k, std::span<float> param, std::span<const float> grad,
                 std::span<float> m, std::span<float> v) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    m[i] = k.beta1 * m[i] + (1.0f - k.beta1) * g;
    v[i] = k.beta2 * v[i] + (1.0f - k.beta2) * g * g;
    const float mhat = m[i] / k.bias_correction1;
    const float vhat = v[i] / k.bias_correction2;
    param[i] -= k.lr * mhat / (std::sqrt(vhat) + k.eps);
  }
}

}  // namespace homofm::simd::scalar
