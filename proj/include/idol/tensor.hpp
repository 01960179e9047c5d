#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "idol/error.hpp"

namespace idol {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. data().size() == product(shape()) always.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    for (auto d : shape_) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape_));
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape_));
    require(data_.size() == shape_size(shape_),
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// 2-D accessors for [H, W] images.
  double& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Stack equally shaped samples along a new leading axis, adding `channel_axis`
/// singleton channel when requested ([H,W] -> [B,1,H,W]).
inline Tensor stack(const std::vector<const Tensor*>& items, bool channel_axis) {
  require(!items.empty(), "cannot stack an empty list of tensors");
  const Shape& inner = items.front()->shape();
  Shape shape{items.size()};
  if (channel_axis) shape.push_back(1);
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const Tensor* t : items) {
    require(t->shape() == inner, "cannot stack tensors of shapes " + shape_str(inner) + " and " + shape_str(t->shape()));
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace idol
