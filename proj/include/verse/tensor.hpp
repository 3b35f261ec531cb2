#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "verse/errors.hpp"

namespace verse {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_string(const Shape& shape);

/// Dense row-major array with shared storage.
///
/// Copies are shallow: two tensors may alias the same buffer. Autograd ops
/// never mutate their inputs, so aliasing is only observable through the
/// mutable accessors, which callers use on tensors they own. Use clone() for
/// an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        storage_(std::make_shared<std::vector<T>>(shape_size(shape_), fill)) {}
  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), storage_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (storage_->size() != shape_size(shape_)) {
      throw ContractError("tensor: " + std::to_string(storage_->size()) +
                          " values do not fill shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const { return storage_ ? storage_->size() : 0; }
  bool empty() const { return size() == 0; }
  bool defined() const { return storage_ != nullptr; }

  T* data() { return storage_ ? storage_->data() : nullptr; }
  const T* data() const { return storage_ ? storage_->data() : nullptr; }
  std::span<T> values() { return {data(), size()}; }
  std::span<const T> values() const { return {data(), size()}; }
  T& operator[](std::size_t i) { return (*storage_)[i]; }
  const T& operator[](std::size_t i) const { return (*storage_)[i]; }

  /// Rows when viewed as a [rows, last-dim] matrix.
  int rows() const { return rank() == 0 ? 1 : static_cast<int>(size() / static_cast<std::size_t>(dim(-1))); }
  int cols() const { return rank() == 0 ? 1 : dim(-1); }

  Tensor clone() const {
    if (!storage_) return {};
    Tensor out;
    out.shape_ = shape_;
    out.storage_ = std::make_shared<std::vector<T>>(*storage_);
    return out;
  }

  /// Same storage, new shape.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ContractError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T v) { std::fill(values().begin(), values().end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(size());
    std::transform(values().begin(), values().end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> storage_;
};

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ContractError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

}  // namespace verse
