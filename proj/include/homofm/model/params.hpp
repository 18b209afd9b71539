#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "homofm/model/config.hpp"
#include "homofm/tensor/tensor.hpp"

namespace homofm::model {

/// Named learnable tensors in a fixed registration order. Names are
/// prefixed by component: "enc.", "head.", "disc.".
template <typename T>
class ModelParams {
 public:
  /// Throws ConfigError on a duplicate name.
  void add(const std::string& name, Tensor<T> value);
  /// Throws ConfigError on an unknown name.
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const noexcept {
    return entries_;
  }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

  /// Tensors whose name starts with `prefix` (all of them for "").
  std::vector<Tensor<T>> tensors(const std::string& prefix = "") const;

  void zero_grad();

  /// Element-wise conversion to another precision (fresh leaves).
  template <typename U>
  ModelParams<U> cast() const;

  /// Independent copy with the same values.
  ModelParams clone() const;

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Configuration plus parameters; the unit that is trained, saved and
/// evaluated.
template <typename T>
struct Model {
  ModelConfig config;
  ModelParams<T> params;

  /// Kaiming-normal convolution and linear weights, zero biases, zero final
  /// velocity/regression layer and zero final discriminator layer. Each
  /// tensor draws from its own stream derived from (seed, name).
  static Model initialize(const ModelConfig& cfg, std::uint64_t seed);
};

/// Hidden width of the direct-regression head actually used by `cfg`.
std::size_t direct_head_width(const ModelConfig& cfg);
/// Scalar parameter counts of the two head variants for `cfg`.
std::size_t fm_head_param_count(const ModelConfig& cfg);
std::size_t direct_head_param_count(const ModelConfig& cfg, std::size_t hidden);

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  for (const auto& [name, t] : entries_) {
    std::vector<U> v(t.data().begin(), t.data().end());
    out.add(name, Tensor<U>(t.shape(), std::move(v), true));
  }
  return out;
}

}  // namespace homofm::model
