#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace lwanet {

/// Thrown when operand shapes or layer hyperparameters are inconsistent.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return n * c * h * w; }
  int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NCHW tensor with row-major storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }

  /// Pointer to the start of the (n, c) spatial plane.
  T* plane(int64_t n, int64_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(int64_t n, int64_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T value);
  void reshape(Shape shape);
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1));
  static Tensor uniform(Shape shape, std::mt19937_64& rng, T lo, T hi);

 private:
  Shape shape_{};
  std::vector<T> data_;
};

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// Static description of a convolution layer. For transposed convolution the
/// same fields describe a layer mapping in_channels -> out_channels whose
/// weight is laid out [in_channels, out_channels, k, k].
struct ConvSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;
  bool has_bias = false;
  std::string name;

  void validate() const;
  Shape output_shape(const Shape& in) const;
  Shape transposed_output_shape(const Shape& in) const;
  Shape weight_shape() const;
  Shape transposed_weight_shape() const;
  bool is_depthwise() const { return groups == in_channels && groups == out_channels && groups > 1; }
  std::string label() const { return name.empty() ? std::string("<unnamed>") : name; }
};

}  // namespace lwanet
