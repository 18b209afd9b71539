// Compiled with -mavx2 -mfma; only reached when the dispatcher has confirmed
// host support.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "homofm/simd/kernels.hpp"

namespace homofm::simd::avx2 {

namespace {

inline __m256i tail_mask(std::size_t count) {
  const __m256i idx = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
  return _mm256_cmpgt_epi32(_mm256_set1_epi32(static_cast<int>(count)), idx);
}

// R rows x up to 16 columns of C over one K block. Both operands are
// packed: `a` holds k groups of 6 row values, `b` holds k rows of 16
// contiguous floats, zero beyond the nc valid columns.
template <int R>
void micro_kernel(const float* a, const float* b, float* c, std::size_t ldc, std::size_t k,
                  std::size_t nc, bool accumulate) {
  __m256 acc0[R];
  __m256 acc1[R];
  for (int r = 0; r < R; ++r) {
    acc0[r] = _mm256_setzero_ps();
    acc1[r] = _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * 16);
    const __m256 b1 = _mm256_loadu_ps(b + p * 16 + 8);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + p * 6 + r);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  if (nc == 16) {
    for (int r = 0; r < R; ++r) {
      float* crow = c + r * ldc;
      if (accumulate) {
        acc0[r] = _mm256_add_ps(acc0[r], _mm256_loadu_ps(crow));
        acc1[r] = _mm256_add_ps(acc1[r], _mm256_loadu_ps(crow + 8));
      }
      _mm256_storeu_ps(crow, acc0[r]);
      _mm256_storeu_ps(crow + 8, acc1[r]);
    }
    return;
  }
  const __m256i m0 = tail_mask(std::min<std::size_t>(nc, 8));
  const __m256i m1 = tail_mask(nc > 8 ? nc - 8 : 0);
  for (int r = 0; r < R; ++r) {
    float* crow = c + r * ldc;
    if (accumulate) {
      acc0[r] = _mm256_add_ps(acc0[r], _mm256_maskload_ps(crow, m0));
      acc1[r] = _mm256_add_ps(acc1[r], _mm256_maskload_ps(crow + 8, m1));
    }
    _mm256_maskstore_ps(crow, m0, acc0[r]);
    _mm256_maskstore_ps(crow + 8, m1, acc1[r]);
  }
}

using MicroKernel = void (*)(const float*, const float*, float*, std::size_t, std::size_t,
                             std::size_t, bool);

constexpr MicroKernel kKernels[7] = {nullptr,         micro_kernel<1>, micro_kernel<2>,
                                     micro_kernel<3>, micro_kernel<4>, micro_kernel<5>,
                                     micro_kernel<6>};

}  // namespace

void gemm(ConstMatrixView<float> a, ConstMatrixView<float> b, MatrixView<float> c,
          bool accumulate, GemmOp op) {
  constexpr std::size_t kRows = 6;
  constexpr std::size_t kCols = 16;
  constexpr std::size_t kDepth = 256;  // packed panel of 16 KiB stays in L1
  const std::size_t m = op.trans_a ? a.cols : a.rows;
  const std::size_t k = op.trans_a ? a.rows : a.cols;
  const std::size_t n = op.trans_b ? b.rows : b.cols;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c.data + i * c.ld, n, 0.0f);
    }
    return;
  }
  alignas(32) static thread_local float panel[kDepth * kCols];
  static thread_local std::vector<float> packed_a;
  const std::size_t row_blocks = (m + kRows - 1) / kRows;
  packed_a.resize(row_blocks * kRows * kDepth);
  for (std::size_t pc = 0; pc < k; pc += kDepth) {
    const std::size_t kc = std::min(kDepth, k - pc);
    const bool acc = accumulate || pc > 0;
    for (std::size_t ib = 0; ib < row_blocks; ++ib) {
      float* dst = packed_a.data() + ib * kRows * kDepth;
      for (std::size_t r = 0; r < kRows; ++r) {
        const std::size_t row = ib * kRows + r;
        if (row < m && op.trans_a) {
          const float* src = a.data + pc * a.ld + row;
          for (std::size_t p = 0; p < kc; ++p) dst[p * kRows + r] = src[p * a.ld];
        } else if (row < m) {
          const float* src = a.data + row * a.ld + pc;
          for (std::size_t p = 0; p < kc; ++p) dst[p * kRows + r] = src[p];
        } else {
          for (std::size_t p = 0; p < kc; ++p) dst[p * kRows + r] = 0.0f;
        }
      }
    }
    for (std::size_t j = 0; j < n; j += kCols) {
      const std::size_t nc = std::min(kCols, n - j);
      if (op.trans_b) {
        for (std::size_t jj = 0; jj < kCols; ++jj) {
          if (jj < nc) {
            const float* src = b.data + (j + jj) * b.ld + pc;
            for (std::size_t p = 0; p < kc; ++p) panel[p * kCols + jj] = src[p];
          } else {
            for (std::size_t p = 0; p < kc; ++p) panel[p * kCols + jj] = 0.0f;
          }
        }
      } else {
        for (std::size_t p = 0; p < kc; ++p) {
          const float* src = b.data + (pc + p) * b.ld + j;
          float* dst = panel + p * kCols;
          std::copy_n(src, nc, dst);
          std::fill(dst + nc, dst + kCols, 0.0f);
        }
      }
      for (std::size_t i = 0; i < m; i += kRows) {
        const std::size_t rows = std::min(kRows, m - i);
        kKernels[rows](packed_a.data() + (i / kRows) * kRows * kDepth, panel,
                       c.data + i * c.ld + j, c.ld, kc, nc, acc);
      }
    }
  }
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  const std::size_t n = x.size();
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x.data() + i), _mm256_loadu_ps(y.data() + i));
    _mm256_storeu_ps(y.data() + i, yv);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sum_squares(std::span<const float> x) {
  const std::size_t n = x.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x.data() + i);
    const __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
    const __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
    acc0 = _mm256_fmadd_pd(lo, lo, acc0);
    acc1 = _mm256_fmadd_pd(hi, hi, acc1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  return s;
}

void scale(float alpha, std::span<float> x) {
  const std::size_t n = x.size();
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(x.data() + i, _mm256_mul_ps(av, _mm256_loadu_ps(x.data() + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

void adam_update(const AdamCoeffs& k, std::span<float> param, std::span<const float> grad,
                 std::span<float> m, std::span<float> v) {
  const std::size_t n = param.size();
  const __m256 b1 = _mm256_set1_ps(k.beta1);
  const __m256 b2 = _mm256_set1_ps(k.beta2);
  const __m256 one_b1 = _mm256_set1_ps(1.0f - k.beta1);
  const __m256 one_b2 = _mm256_set1_ps(1.0f - k.beta2);
  const __m256 bc1 = _mm256_set1_ps(k.bias_correction1);
  const __m256 bc2 = _mm256_set1_ps(k.bias_correction2);
  const __m256 lr = _mm256_set1_ps(k.lr);
  const __m256 eps = _mm256_set1_ps(k.eps);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grad.data() + i);
    __m256 mv = _mm256_loadu_ps(m.data() + i);
    __m256 vv = _mm256_loadu_ps(v.data() + i);
    mv = _mm256_add_ps(_mm256_mul_ps(b1, mv), _mm256_mul_ps(one_b1, g));
    vv = _mm256_add_ps(_mm256_mul_ps(b2, vv), _mm256_mul_ps(_mm256_mul_ps(one_b2, g), g));
    _mm256_storeu_ps(m.data() + i, mv);
    _mm256_storeu_ps(v.data() + i, vv);
    const __m256 mhat = _mm256_div_ps(mv, bc1);
    const __m256 vhat = _mm256_div_ps(vv, bc2);
    const __m256 step = _mm256_div_ps(_mm256_mul_ps(lr, mhat), _mm256_add_ps(_mm256_sqrt_ps(vhat), eps));
    _mm256_storeu_ps(param.data() + i, _mm256_sub_ps(_mm256_loadu_ps(param.data() + i), step));
  }
  if (i < n) {
    scalar::adam_update(k, param.subspan(i), grad.subspan(i), m.subspan(i), v.subspan(i));
  }
}

}  // namespace homofm::simd::avx2
