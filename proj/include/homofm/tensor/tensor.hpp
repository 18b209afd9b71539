#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace homofm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches the node
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
  }
};

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

}  // namespace detail

/// Dense row-major array. Copies share the underlying node; values are not
/// modified by ops, which always allocate fresh outputs. Leaf tensors (model
/// parameters) may be updated in place by the optimizer between tapes.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  /// Accumulated gradient; all zeros if nothing flowed into this tensor.
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf with copied values and no gradient history.
  Tensor detach() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }
  const detail::NodePtr<T>& node() const noexcept { return node_; }

 private:
  explicit Tensor(detail::NodePtr<T> node) : node_(std::move(node)) {}
  template <typename U>
  friend class GradTape;
  template <typename U>
  friend Tensor<U> make_tensor(detail::NodePtr<U> node);

  detail::NodePtr<T> node_;
};

template <typename T>
Tensor<T> make_tensor(detail::NodePtr<T> node) {
  return Tensor<T>(std::move(node));
}

/// Ordered record of executed differentiable ops. backward() walks the
/// record in reverse execution order, which is a reverse topological order
/// of the graph, invoking each node's rule exactly once.
template <typename T>
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  struct Entry {
    std::string_view op;
    std::vector<detail::NodePtr<T>> inputs;
    detail::NodePtr<T> output;
    BackwardFn backward;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(std::string_view op, std::vector<detail::NodePtr<T>> inputs,
              detail::NodePtr<T> output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one value.
  void backward(const Tensor<T>& loss);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  void clear() { entries_.clear(); }

  /// Tape receiving ops on this thread, or nullptr.
  static GradTape* active() noexcept { return active_; }

 private:
  template <typename U>
  friend class TapeScope;
  template <typename U>
  friend class NoGradScope;
  static thread_local GradTape* active_;

  std::vector<Entry> entries_;
};

template <typename T>
thread_local GradTape<T>* GradTape<T>::active_ = nullptr;

/// Makes `tape` the active tape of the calling thread for its lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradTape<T>& tape) : previous_(GradTape<T>::active_) {
    GradTape<T>::active_ = &tape;
  }
  ~TapeScope() { GradTape<T>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<T>* previous_;
};

/// Suspends recording on the calling thread (evaluation with frozen
/// parameters).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(GradTape<T>::active_) { GradTape<T>::active_ = nullptr; }
  ~NoGradScope() { GradTape<T>::active_ = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape<T>* previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace homofm
