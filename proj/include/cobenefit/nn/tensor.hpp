#ifndef COBENEFIT_NN_TENSOR_HPP
#define COBENEFIT_NN_TENSOR_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cobenefit::nn {

/// Dense row-major tensor of doubles with up to four dimensions.
///
/// Batched image tensors use the layout [batch, channel, row, col]; dense
/// activations use [batch, features].
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    if (shape_.size() > kMaxRank) {
      throw std::invalid_argument("Tensor: rank " + std::to_string(shape_.size()) +
                                  " exceeds " + std::to_string(kMaxRank));
    }
    data_.assign(count_of(shape_), fill);
  }

  Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0)
      : Tensor(std::vector<std::size_t>(shape), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_.size() > kMaxRank) {
      throw std::invalid_argument("Tensor: rank exceeds 4");
    }
    if (data_.size() != count_of(shape_)) {
      throw std::invalid_argument("Tensor: value count " + std::to_string(data_.size()) +
                                  " does not match shape (" +
                                  std::to_string(count_of(shape_)) + ")");
    }
  }

  static std::size_t count_of(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t a, std::size_t b) { return data_[a * shape_[1] + b]; }
  const double& at(std::size_t a, std::size_t b) const { return data_[a * shape_[1] + b]; }

  double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const double& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  /// Number of elements per leading (batch) index.
  std::size_t stride0() const { return shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (count_of(shape) != size()) {
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace cobenefit::nn

#endif  // COBENEFIT_NN_TENSOR_HPP
