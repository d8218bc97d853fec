#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lwanet/tensor.hpp"

// Forward and backward numerical kernels on raw tensors. Everything here is a
// pure function of its arguments except the batchnorm running-stat update.
namespace lwanet::kernels {

/// Worker threads used by the heavier kernels. Results are bit-identical for
/// any worker count because each output element is owned by one worker.
void set_num_workers(int workers);
int num_workers();
void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& body);

// --- convolution --------------------------------------------------------

/// im2col + matrix-multiply convolution; bias may be null.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                 const ConvSpec& spec);

/// Reference direct-loop convolution (the definitional contract).
template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                        const ConvSpec& spec);

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                                const ConvSpec& spec, const Shape& input_shape);

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& x, const Tensor<T>& grad_out,
                                 const ConvSpec& spec);

/// Sum over n, h, w: the bias gradient, shape [1, C, 1, 1].
template <typename T>
Tensor<T> channel_sum(const Tensor<T>& grad_out);

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                           const ConvSpec& spec);

template <typename T>
Tensor<T> depthwise_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                                   const ConvSpec& spec, const Shape& input_shape);

template <typename T>
Tensor<T> depthwise_backward_weight(const Tensor<T>& x, const Tensor<T>& grad_out,
                                    const ConvSpec& spec);

/// Direct scatter implementation of the transposed convolution; weight is
/// [in_channels, out_channels, k, k].
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                            const ConvSpec& spec);

/// The convolution whose adjoint is transposed_conv2d(spec).
ConvSpec adjoint_conv_spec(const ConvSpec& transposed);

// --- pooling, activations ------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu6(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x);

// --- batchnorm -----------------------------------------------------------

template <typename T>
struct BatchNormSaved {
  std::vector<T> mean;
  std::vector<T> invstd;
};

/// Normalizes by batch statistics and folds them into the running stats with
/// the given momentum (running_var uses the unbiased estimate).
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                          std::type_identity_t<BatchNormSaved<T>>* saved);

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps,
                         std::type_identity_t<BatchNormSaved<T>>* saved);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                     const Tensor<T>& gamma, const BatchNormSaved<T>& saved,
                                     bool batch_statistics);

// --- elementwise ---------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y);

/// Scales every (h, w) position of channel k of x by a[n, k].
template <typename T>
Tensor<T> broadcast_mul_channels(const Tensor<T>& x, const Tensor<T>& a);

/// Bilinear resize by an integer factor, half-pixel centers (align_corners off).
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int64_t factor);

template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& grad_out, const Shape& input_shape,
                                     int64_t factor);

}  // namespace lwanet::kernels
