#include "homofm/flowmatch/flow.hpp"

#include <cmath>

#include "homofm/error.hpp"
#include "homofm/tensor/ops.hpp"

namespace homofm::flowmatch {

SolverConfig::SolverConfig(std::size_t n_steps) : n_steps_(n_steps) {
  if (n_steps == 0) throw ConfigError("solver needs at least one Euler step");
}

template <typename T>
FlowState<T> interpolate_state(const Tensor<T>& w_gt, T t) {
  if (!(t >= T{0} && t <= T{1})) {
    throw DomainError("interpolation time " + std::to_string(t) + " outside [0, 1]");
  }
  return {ops::scale(w_gt, t), t};
}

template <typename T>
Tensor<T> target_velocity(const Tensor<T>& w_gt) {
  return w_gt;
}

template <typename T>
Tensor<T> euler_solve(const VelocityFn<T>& velocity, const SolverConfig& cfg,
                      const Tensor<T>& context, const Shape& field_shape) {
  const T dt = static_cast<T>(cfg.dt());
  Tensor<T> x = Tensor<T>::zeros(field_shape);
  for (std::size_t n = 1; n <= cfg.n_steps(); ++n) {
    const T t_prev = static_cast<T>(cfg.time_at(n - 1));
    const Tensor<T> v = velocity(FlowState<T>{x, t_prev}, context);
    if (v.shape() != field_shape) {
      throw ShapeError("velocity " + shape_to_string(v.shape()) + " does not match field " +
                       shape_to_string(field_shape));
    }
    for (T value : v.data()) {
      if (!std::isfinite(value)) throw NumericError("non-finite velocity in Euler solve", n);
    }
    x = ops::add(x, ops::scale(v, dt));
  }
  return x;
}

template <typename T>
Tensor<T> flow_matching_loss(const Tensor<T>& w_pred, const Tensor<T>& w_gt, RobustCost rho,
                             std::size_t channel_axis) {
  if (w_pred.shape() != w_gt.shape()) {
    throw ShapeError("flow_matching_loss: " + shape_to_string(w_pred.shape()) + " vs " +
                     shape_to_string(w_gt.shape()));
  }
  const Tensor<T> residual = ops::sub(w_pred, w_gt);
  switch (rho) {
    case RobustCost::kL2:
      return ops::mean(ops::l2_norm(residual, channel_axis));
    case RobustCost::kCharbonnier: {
      const T eps = static_cast<T>(kCharbonnierEps);
      const Tensor<T> sq = ops::sum_axis(ops::mul(residual, residual), channel_axis);
      return ops::add_scalar(ops::mean(ops::sqrt(ops::add_scalar(sq, eps * eps))), -eps);
    }
  }
  throw ConfigError("unknown robust cost");
}

template FlowState<float> interpolate_state(const Tensor<float>&, float);
template FlowState<double> interpolate_state(const Tensor<double>&, double);
template Tensor<float> target_velocity(const Tensor<float>&);
template Tensor<double> target_velocity(const Tensor<double>&);
template Tensor<float> euler_solve(const VelocityFn<float>&, const SolverConfig&,
                                   const Tensor<float>&, const Shape&);
template Tensor<double> euler_solve(const VelocityFn<double>&, const SolverConfig&,
                                    const Tensor<double>&, const Shape&);
template Tensor<float> flow_matching_loss(const Tensor<float>&, const Tensor<float>&, RobustCost,
                                          std::size_t);
template Tensor<double> flow_matching_loss(const Tensor<double>&, const Tensor<double>&,
                                           RobustCost, std::size_t);

}  // namespace homofm::flowmatch
