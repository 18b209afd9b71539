#include <atomic>
#include <cstdlib>
#include <string_view>

#include "homofm/error.hpp"
#include "homofm/simd/kernels.hpp"

namespace homofm::simd {

namespace {

bool host_has_avx2() {
#if defined(HOMOFM_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  const Isa best = detected_isa();
  if (const char* env = std::getenv("HOMOFM_SIMD")) {
    if (std::string_view(env) == "scalar") return Isa::kScalar;
  }
  return best;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

Isa detected_isa() {
  static const Isa isa = host_has_avx2() ? Isa::kAvx2 : Isa::kScalar;
  return isa;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::kAvx2 && detected_isa() != Isa::kAvx2) {
    throw ConfigError("AVX2+FMA kernels requested but not supported by this host");
  }
  active().store(isa, std::memory_order_relaxed);
}

#if defined(HOMOFM_HAVE_AVX2_KERNELS)
#define HOMOFM_DISPATCH(fn, ...)                          \
  do {                                                    \
    if (active_isa() == Isa::kAvx2) return avx2::fn(__VA_ARGS__); \
    return scalar::fn(__VA_ARGS__);                       \
  } while (false)
#else
#define HOMOFM_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void gemm(ConstMatrixView<float> a, ConstMatrixView<float> b, MatrixView<float> c,
          bool accumulate, GemmOp op) {
  HOMOFM_DISPATCH(gemm, a, b, c, accumulate, op);
}

void gemm(ConstMatrixView<double> a, ConstMatrixView<double> b, MatrixView<double> c,
          bool accumulate, GemmOp op) {
  scalar::gemm(a, b, c, accumulate, op);
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  HOMOFM_DISPATCH(axpy, alpha, x, y);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double sum_squares(std::span<const float> x) { HOMOFM_DISPATCH(sum_squares, x); }

double sum_squares(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

void scale(float alpha, std::span<float> x) { HOMOFM_DISPATCH(scale, alpha, x); }

void scale(double alpha, std::span<double> x) {
  for (double& v : x) v *= alpha;
}

void adam_update(const AdamCoeffs& k, std::span<float> param, std::span<const float> grad,
                 std::span<float> m, std::span<float> v) {
  HOMOFM_DISPATCH(adam_update, k, param, grad, m, v);
}

}  // namespace homofm::simd
