#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikediff {

using Shape = std::vector<std::int64_t>;

/// Number of elements described by `shape`. A rank-0 shape holds one element.
std::int64_t shape_numel(const Shape& shape);

std::string shape_str(const Shape& shape);

/// Raised whenever operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major n-dimensional array.
///
/// Tensors are plain values: copying a tensor copies its storage. The
/// `requires_grad` flag is only consulted when the tensor enters a Graph as a
/// leaf.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{0} {}

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(checked_numel(shape_)), fill) {}

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T{1}); }
  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  T item() const {
    if (data_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  BasicTensor& set_requires_grad(bool value) noexcept {
    requires_grad_ = value;
    return *this;
  }

  /// Same storage reinterpreted under a new shape with equal element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  static std::int64_t checked_numel(const Shape& shape) {
    for (auto d : shape) {
      if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    }
    return shape_numel(shape);
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// True when every element is finite.
template <typename T>
bool all_finite(const BasicTensor<T>& t);

/// Largest absolute elementwise difference. Shapes must match.
template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace spikediff
