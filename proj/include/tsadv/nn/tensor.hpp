#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tsadv/error.hpp"

namespace tsadv::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major array: [batch, channels, length] or [batch, features].
template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor storage of " + std::to_string(data_.size()) + " elements does not match shape " +
                       shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t b, std::size_t c, std::size_t l) { return data_[(b * shape_[1] + c) * shape_[2] + l]; }
  const T& at(std::size_t b, std::size_t c, std::size_t l) const { return data_[(b * shape_[1] + c) * shape_[2] + l]; }
  T& at(std::size_t b, std::size_t f) { return data_[b * shape_[1] + f]; }
  const T& at(std::size_t b, std::size_t f) const { return data_[b * shape_[1] + f]; }

  /// Same storage, new shape of equal size.
  Tensor reshaped(Shape s) const& { return Tensor(std::move(s), data_); }
  Tensor reshaped(Shape s) && { return Tensor(std::move(s), std::move(data_)); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

private:
  Shape shape_;
  std::vector<T> data_;
};

/// Rows [first, first + count) of the leading (batch) axis.
template <typename T>
Tensor<T> batch_slice(const Tensor<T>& src, std::size_t first, std::size_t count) {
  Shape s = src.shape();
  const std::size_t per = src.size() / s[0];
  s[0] = count;
  std::vector<T> d(src.data() + first * per, src.data() + (first + count) * per);
  return Tensor<T>(std::move(s), std::move(d));
}

}  // namespace tsadv::nn
