#pragma once

#include <cstdint>
#include <vector>

#include "homofm/tensor/tensor.hpp"

namespace homofm {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments for one parameter tensor.
template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam step, in place. `state` moments start at zero
/// with step 0; they are sized lazily on first use.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamState<T>& state,
                 const AdamConfig& cfg);

/// Adam over a fixed list of parameter tensors, reading their accumulated
/// gradients.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig cfg);

  void step();
  void zero_grad();
  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps_taken() const noexcept { return states_.empty() ? 0 : states_[0].step; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<AdamState<T>> states_;
  AdamConfig cfg_;
};

struct ClipResult {
  double norm_before;
  double norm_after;
};

/// Global-norm clipping: if the joint L2 norm g of every gradient exceeds
/// max_norm, all gradients are scaled by max_norm / g.
template <typename T>
ClipResult clip_global_norm(std::vector<std::span<T>> grads, double max_norm);

/// Convenience overload acting on the accumulated gradients of `params`.
template <typename T>
ClipResult clip_global_norm(std::vector<Tensor<T>>& params, double max_norm);

template <typename T>
double global_norm(const std::vector<std::span<const T>>& grads);

}  // namespace homofm
