#include "homofm/tensor/optim.hpp"

#include <cmath>

#include "homofm/error.hpp"
#include "homofm/simd/kernels.hpp"

namespace homofm {

namespace {

void adam_kernel(std::span<float> p, std::span<const float> g, std::span<float> m,
                 std::span<float> v, const AdamConfig& cfg, std::uint64_t step) {
  const double t = static_cast<double>(step);
  simd::AdamCoeffs k{static_cast<float>(cfg.lr),
                     static_cast<float>(cfg.beta1),
                     static_cast<float>(cfg.beta2),
                     static_cast<float>(cfg.eps),
                     static_cast<float>(1.0 - std::pow(cfg.beta1, t)),
                     static_cast<float>(1.0 - std::pow(cfg.beta2, t))};
  simd::adam_update(k, p, g, m, v);
}

void adam_kernel(std::span<double> p, std::span<const double> g, std::span<double> m,
                 std::span<double> v, const AdamConfig& cfg, std::uint64_t step) {
  const double t = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    p[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
  }
}

}  // namespace

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamState<T>& state,
                 const AdamConfig& cfg) {
  if (param.size() != grad.size()) {
    throw ShapeError("adam_update: " + std::to_string(param.size()) + " params vs " +
                     std::to_string(grad.size()) + " gradients");
  }
  if (state.m.empty()) {
    state.m.assign(param.size(), T{0});
    state.v.assign(param.size(), T{0});
  }
  ++state.step;
  adam_kernel(param, grad, std::span<T>(state.m), std::span<T>(state.v), cfg, state.step);
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig cfg)
    : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

template <typename T>
void Adam<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_update<T>(params_[i].mutable_data(), params_[i].grad(), states_[i], cfg_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
double global_norm(const std::vector<std::span<const T>>& grads) {
  double s = 0.0;
  for (auto g : grads) s += simd::sum_squares(g);
  return std::sqrt(s);
}

template <typename T>
ClipResult clip_global_norm(std::vector<std::span<T>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw DomainError("clip_global_norm: max_norm must be positive");
  std::vector<std::span<const T>> views(grads.begin(), grads.end());
  const double norm = global_norm<T>(views);
  if (!(norm > max_norm)) return {norm, norm};
  const double factor = max_norm / norm;
  for (auto g : grads) simd::scale(static_cast<T>(factor), g);
  std::vector<std::span<const T>> after(grads.begin(), grads.end());
  return {norm, global_norm<T>(after)};
}

template <typename T>
ClipResult clip_global_norm(std::vector<Tensor<T>>& params, double max_norm) {
  std::vector<std::span<T>> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(p.mutable_grad());
  return clip_global_norm<T>(std::move(grads), max_norm);
}

template void adam_update<float>(std::span<float>, std::span<const float>, AdamState<float>&,
                                 const AdamConfig&);
template void adam_update<double>(std::span<double>, std::span<const double>, AdamState<double>&,
                                  const AdamConfig&);
template class Adam<float>;
template class Adam<double>;
template double global_norm<float>(const std::vector<std::span<const float>>&);
template double global_norm<double>(const std::vector<std::span<const double>>&);
template ClipResult clip_global_norm<float>(std::vector<std::span<float>>, double);
template ClipResult clip_global_norm<double>(std::vector<std::span<double>>, double);
template ClipResult clip_global_norm<float>(std::vector<Tensor<float>>&, double);
template ClipResult clip_global_norm<double>(std::vector<Tensor<double>>&, double);

}  // namespace homofm
