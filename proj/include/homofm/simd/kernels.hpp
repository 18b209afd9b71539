#pragma once

// Arithmetic inner loops used by the tensor engine and the optimizer.
//
// Every kernel has a portable scalar reference implementation. On x86-64
// hosts with AVX2+FMA an intrinsic variant is selected at startup; the
// choice can be overridden with set_isa() or the HOMOFM_SIMD environment
// variable ("scalar" / "avx2"). Double precision always runs the scalar path
// so verification numerics stay independent of the vector code.

#include <cstddef>
#include <span>

namespace homofm::simd {

enum class Isa { kScalar, kAvx2 };

const char* isa_name(Isa isa);

/// Best instruction set the host supports.
Isa detected_isa();

/// Instruction set the dispatching entry points currently use.
Isa active_isa();

/// Throws homofm::ConfigError if the host does not support `isa`.
void set_isa(Isa isa);

/// Row-major matrix view; `ld` is the distance between consecutive rows.
template <typename T>
struct MatrixView {
  T* data;
  std::size_t rows;
  std::size_t cols;
  std::size_t ld;
};

template <typename T>
using ConstMatrixView = MatrixView<const T>;

struct AdamCoeffs {
  float lr;
  float beta1;
  float beta2;
  float eps;
  float bias_correction1;  // 1 - beta1^step
  float bias_correction2;  // 1 - beta2^step
};

/// Which stored operands enter the product transposed.
struct GemmOp {
  bool trans_a = false;
  bool trans_b = false;
};

// c (+)= op(a) * op(b); the views describe the matrices as stored.
void gemm(ConstMatrixView<float> a, ConstMatrixView<float> b, MatrixView<float> c,
          bool accumulate, GemmOp op = {});
void gemm(ConstMatrixView<double> a, ConstMatrixView<double> b, MatrixView<double> c,
          bool accumulate, GemmOp op = {});

// y += alpha * x
void axpy(float alpha, std::span<const float> x, std::span<float> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Sum of squares accumulated in double.
double sum_squares(std::span<const float> x);
double sum_squares(std::span<const double> x);

void scale(float alpha, std::span<float> x);
void scale(double alpha, std::span<double> x);

void adam_update(const AdamCoeffs& k, std::span<float> param, std::span<const float> grad,
                 std::span<float> m, std::span<float> v);

namespace scalar {
void gemm(ConstMatrixView<float> a, ConstMatrixView<float> b, MatrixView<float> c,
          bool accumulate, GemmOp op = {});
void gemm(ConstMatrixView<double> a, ConstMatrixView<double> b, MatrixView<double> c,
          bool accumulate, GemmOp op = {});
void axpy(float alpha, std::span<const float> x, std::span<float> y);
double sum_squares(std::span<const float> x);
void scale(float alpha, std::span<float> x);
void adam_update(const AdamCoeffs& k, std::span<float> param, std::span<const float> grad,
                 std::span<float> m, std::span<float> v);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define HOMOFM_HAVE_AVX2_KERNELS 1
namespace avx2 {
void gemm(ConstMatrixView<float> a, ConstMatrixView<float> b, MatrixView<float> c,
          bool accumulate, GemmOp op = {});
void axpy(float alpha, std::span<const float> x, std::span<float> y);
double sum_squares(std::span<const float> x);
void scale(float alpha, std::span<float> x);
void adam_update(const AdamCoeffs& k, std::span<float> param, std::span<const float> grad,
                 std::span<float> m, std::span<float> v);
}  // namespace avx2
#endif

}  // namespace homofm::simd
