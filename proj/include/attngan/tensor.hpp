#ifndef ATTNGAN_TENSOR_HPP_
#define ATTNGAN_TENSOR_HPP_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "attngan/error.hpp"

namespace attngan {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);

/// Element count of a shape; throws ShapeError on empty or non-positive dims.
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major tensor. Copies are cheap handles sharing one buffer; the
/// buffer is treated as immutable except through mutable_data(), which is
/// reserved for parameter updates, initialization and checkpoint loading.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    if (static_cast<std::int64_t>(values.size()) != n) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " needs " + std::to_string(n) +
                       " elements, got " + std::to_string(values.size()));
    }
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->storage = std::make_shared<std::vector<T>>(std::move(values));
    impl_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                       requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return checked().shape.size(); }
  std::int64_t dim(std::size_t axis) const { return checked().shape.at(axis); }
  std::int64_t numel() const { return static_cast<std::int64_t>(checked().storage->size()); }

  std::span<const T> data() const { return {checked().storage->data(), checked().storage->size()}; }
  std::span<T> mutable_data() { return {checked().storage->data(), checked().storage->size()}; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return data()[0];
  }

  bool requires_grad() const { return checked().requires_grad; }
  bool is_leaf() const { return checked().leaf; }

  void set_requires_grad(bool flag) {
    if (!checked().leaf) {
      throw StateError("set_requires_grad on a non-leaf tensor");
    }
    impl_->requires_grad = flag;
  }

  /// New leaf handle over the same buffer, outside any gradient flow.
  BasicTensor detach() const {
    BasicTensor out;
    out.impl_ = std::make_shared<Impl>();
    out.impl_->shape = shape();
    out.impl_->storage = checked().storage;
    return out;
  }

  BasicTensor clone() const {
    return BasicTensor(shape(), std::vector<T>(data().begin(), data().end()), requires_grad());
  }

  /// Identity of the handle's node; distinct for views over the same buffer.
  const void* id() const noexcept { return impl_.get(); }

  // Used by ops: a same-storage view with a different shape, and marking of
  // op outputs that belong to a recorded graph.
  BasicTensor view_as(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape()) + " as " + shape_str(new_shape));
    }
    BasicTensor out;
    out.impl_ = std::make_shared<Impl>();
    out.impl_->shape = std::move(new_shape);
    out.impl_->storage = checked().storage;
    return out;
  }

  void mark_recorded() {
    checked();
    impl_->leaf = false;
    impl_->requires_grad = true;
  }

 private:
  struct Impl {
    Shape shape;
    std::shared_ptr<std::vector<T>> storage;
    bool requires_grad = false;
    bool leaf = true;
  };

  const Impl& checked() const {
    if (!impl_) {
      throw StateError("use of an undefined tensor");
    }
    return *impl_;
  }

  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& in) {
  auto src = in.data();
  return BasicTensor<To>(in.shape(), std::vector<To>(src.begin(), src.end()), false);
}

/// Bitwise equality of shape and contents.
template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace attngan

#endif  // ATTNGAN_TENSOR_HPP_
