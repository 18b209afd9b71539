#pragma once

// Dirac-prior conditional flow matching over displacement fields.
//
// The transport path starts at the zero field (x_0 = 0) and ends at the
// ground-truth displacement x_1 = w_gt. With the straight-line interpolant
//   x_t = (1 - t) x_0 + t x_1 = t * w_gt
// the velocity along the path is the constant w_gt. A learned field
// v(x_t, t, C) is integrated from t = 0 with N explicit Euler steps.
//
// Displacement fields here are tensors with a channel axis holding (dx, dy),
// typically [B x 2 x H x W]; the functions are agnostic to the exact layout
// as long as shapes agree.

#include <cstddef>
#include <functional>

#include "homofm/tensor/tensor.hpp"

namespace homofm::flowmatch {

template <typename T>
struct FlowState {
  Tensor<T> x;  // current displacement
  T t;          // time in [0, 1]
};

/// Number of Euler steps; the step size is derived, never stored.
class SolverConfig {
 public:
  explicit SolverConfig(std::size_t n_steps = 4);

  std::size_t n_steps() const noexcept { return n_steps_; }
  double dt() const noexcept { return 1.0 / static_cast<double>(n_steps_); }
  /// t_n = n / N
  double time_at(std::size_t n) const noexcept {
    return static_cast<double>(n) / static_cast<double>(n_steps_);
  }

 private:
  std::size_t n_steps_;
};

/// x_t = t * w_gt. Throws DomainError for t outside [0, 1].
template <typename T>
FlowState<T> interpolate_state(const Tensor<T>& w_gt, T t);

/// d/dt x_t = w_gt, independent of t.
template <typename T>
Tensor<T> target_velocity(const Tensor<T>& w_gt);

template <typename T>
using VelocityFn = std::function<Tensor<T>(const FlowState<T>& state, const Tensor<T>& context)>;

/// Integrates from x_0 = 0 (of `field_shape`) with N Euler steps:
///   x_{t_n} = x_{t_{n-1}} + v(x_{t_{n-1}}, t_{n-1}, C) * dt
/// and returns x_{t_N}. Differentiable end to end when recorded on a tape.
/// A non-finite velocity aborts with NumericError carrying the step index
/// (1-based).
template <typename T>
Tensor<T> euler_solve(const VelocityFn<T>& velocity, const SolverConfig& cfg,
                      const Tensor<T>& context, const Shape& field_shape);

enum class RobustCost {
  kL2,           // rho(r) = r
  kCharbonnier,  // rho(r) = sqrt(r^2 + eps^2) - eps
};

inline constexpr double kCharbonnierEps = 1e-3;

/// Mean over grid points of rho(||w_pred - w_gt||_2), the norm taken over
/// `channel_axis` (the (dx, dy) axis).
template <typename T>
Tensor<T> flow_matching_loss(const Tensor<T>& w_pred, const Tensor<T>& w_gt, RobustCost rho,
                             std::size_t channel_axis = 1);

}  // namespace homofm::flowmatch
