#include "lwanet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lwanet {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension " + shape.str());
  }
  data_.assign(static_cast<size_t>(shape.numel()), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape.str());
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (shape.numel() != numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  shape_ = shape;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, std::mt19937_64& rng, T stddev) {
  Tensor<T> t(shape);
  std::normal_distribution<T> dist(T(0), stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, std::mt19937_64& rng, T lo, T hi) {
  Tensor<T> t(shape);
  std::uniform_real_distribution<T> dist(lo, hi);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("dot of " + a.shape().str() + " and " + b.shape().str());
  }
  T acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff of " + a.shape().str() + " and " + b.shape().str());
  }
  T m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void ConvSpec::validate() const {
  auto fail = [&](const std::string& what) {
    throw ShapeError("layer " + label() + ": " + what);
  };
  if (in_channels < 1 || out_channels < 1) fail("channel counts must be positive");
  if (kernel < 1) fail("kernel must be >= 1");
  if (stride < 1) fail("stride must be >= 1");
  if (padding < 0) fail("padding must be >= 0");
  if (groups < 1) fail("groups must be >= 1");
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    fail("channels (" + std::to_string(in_channels) + ", " + std::to_string(out_channels) +
         ") not divisible by groups " + std::to_string(groups));
  }
}

Shape ConvSpec::output_shape(const Shape& in) const {
  validate();
  if (in.c != in_channels) {
    throw ShapeError("layer " + label() + ": input " + in.str() + " has " + std::to_string(in.c) +
                     " channels, expected " + std::to_string(in_channels));
  }
  const int64_t oh = (in.h + 2 * padding - kernel) / stride + 1;
  const int64_t ow = (in.w + 2 * padding - kernel) / stride + 1;
  if (in.h + 2 * padding < kernel || in.w + 2 * padding < kernel || oh < 1 || ow < 1) {
    throw ShapeError("layer " + label() + ": input " + in.str() + " too small for kernel " +
                     std::to_string(kernel));
  }
  return {in.n, out_channels, oh, ow};
}

Shape ConvSpec::transposed_output_shape(const Shape& in) const {
  validate();
  if (groups != 1) throw ShapeError("layer " + label() + ": grouped transposed conv unsupported");
  if (in.c != in_channels) {
    throw ShapeError("layer " + label() + ": input " + in.str() + " has " + std::to_string(in.c) +
                     " channels, expected " + std::to_string(in_channels));
  }
  const int64_t oh = (in.h - 1) * stride - 2 * padding + kernel;
  const int64_t ow = (in.w - 1) * stride - 2 * padding + kernel;
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("layer " + label() + ": transposed conv output would be " +
                     std::to_string(oh) + "x" + std::to_string(ow) + " for input " + in.str());
  }
  return {in.n, out_channels, oh, ow};
}

Shape ConvSpec::weight_shape() const {
  return {out_channels, in_channels / groups, kernel, kernel};
}

Shape ConvSpec::transposed_weight_shape() const {
  return {in_channels, out_channels, kernel, kernel};
}

template class Tensor<float>;
template class Tensor<double>;
template float dot(const Tensor<float>&, const Tensor<float>&);
template double dot(const Tensor<double>&, const Tensor<double>&);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace lwanet
