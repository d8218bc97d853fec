#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "lwanet/autodiff.hpp"
#include "lwanet/graph.hpp"
#include "lwanet/param_store.hpp"

// Composite building blocks. Each block has a `describe_*` function that
// declares its tensors and layer nodes on a GraphBuilder, a `bind_*` function
// that resolves those tensors from a ParamStore, and a forward function.
namespace lwanet::blocks {

// --- conv -> batchnorm -> relu6 ----------------------------------------------

template <typename T>
struct ConvBnParams {
  std::string name;
  Var<T> weight;
  BatchNormRef<T> bn;
  int64_t stride = 1;
  bool activation = true;
};

Shape describe_conv_bn(GraphBuilder& g, const std::string& prefix, const Shape& in,
                       int64_t out_channels, int64_t kernel, int64_t stride, bool activation = true);

template <typename T>
ConvBnParams<T> bind_conv_bn(const ParamBinder<T>& p, const std::string& prefix, int64_t stride,
                             bool activation = true);

template <typename T>
Var<T> conv_bn(const Var<T>& x, const ConvBnParams<T>& params, const BnOptions<T>& bn);

// --- depthwise separable convolution -----------------------------------------

template <typename T>
struct DSConvParams {
  std::string name;
  Var<T> depthwise;  // [c, 1, k, k]
  BatchNormRef<T> bn1;
  Var<T> pointwise;  // [d2, c, 1, 1]
  BatchNormRef<T> bn2;
};

/// k*k*c + c*d2 + 4c + 4d2, batchnorm statistics included.
int64_t ds_conv_param_count(int64_t channels, int64_t out_channels, int64_t kernel);

Shape describe_ds_conv(GraphBuilder& g, const std::string& prefix, const Shape& in,
                       int64_t out_channels, int64_t kernel = 3, int64_t stride = 1);

template <typename T>
DSConvParams<T> bind_ds_conv(const ParamBinder<T>& p, const std::string& prefix);

/// depthwise(k, stride) -> bn -> relu6 -> pointwise -> bn -> relu6
template <typename T>
Var<T> ds_conv(const Var<T>& x, const DSConvParams<T>& params, int64_t stride,
               const BnOptions<T>& bn);

// --- MobileNetV2 inverted residual -------------------------------------------

template <typename T>
struct InvertedResidualParams {
  std::string name;
  std::optional<Var<T>> expand;  // absent when the expansion ratio is 1
  std::optional<BatchNormRef<T>> expand_bn;
  Var<T> depthwise;
  BatchNormRef<T> depthwise_bn;
  Var<T> project;
  BatchNormRef<T> project_bn;
  int64_t stride = 1;
  bool residual = false;
};

int64_t expanded_channels(int64_t in_channels, double expand_ratio);
int64_t inverted_residual_param_count(int64_t in_channels, int64_t out_channels,
                                      double expand_ratio, int64_t kernel = 3);

Shape describe_inverted_residual(GraphBuilder& g, const std::string& prefix, const Shape& in,
                                 int64_t out_channels, double expand_ratio, int64_t stride);

/// Residual is enabled iff stride is 1 and the block preserves channels.
template <typename T>
InvertedResidualParams<T> bind_inverted_residual(const ParamBinder<T>& p,
                                                 const std::string& prefix, int64_t stride);

/// expand(1x1, relu6) -> depthwise(3x3, stride, relu6) -> project(1x1, linear)
template <typename T>
Var<T> inverted_residual_branch(const Var<T>& x, const InvertedResidualParams<T>& params,
                                const BnOptions<T>& bn);

template <typename T>
Var<T> inverted_residual(const Var<T>& x, const InvertedResidualParams<T>& params,
                         const BnOptions<T>& bn);

// --- attention fusion block --------------------------------------------------

/// Squeeze-and-excitation weights of one branch, stored as 1x1 convolutions.
template <typename T>
struct SEParams {
  Var<T> w_alpha;  // [c/r, c, 1, 1]
  Var<T> b_alpha;  // [1, c/r, 1, 1]
  Var<T> w_beta;   // [c, c/r, 1, 1]
  Var<T> b_beta;   // [1, c, 1, 1]
};

template <typename T>
struct AFBParams {
  std::string name;
  SEParams<T> low;
  SEParams<T> high;
};

int64_t se_param_count(int64_t channels, int64_t reduction);
int64_t afb_param_count(int64_t channels, int64_t reduction);

Shape describe_afb(GraphBuilder& g, const std::string& prefix, const Shape& low,
                   const Shape& high, int64_t reduction);

template <typename T>
AFBParams<T> bind_afb(const ParamBinder<T>& p, const std::string& prefix);

/// Channel attention vector sigmoid(Wb * relu(Wa * gap(x) + ba) + bb), [n,c,1,1].
template <typename T>
Var<T> se_attention(const Var<T>& x, const SEParams<T>& se);

/// Gates low- and high-level features with their own attention vectors and
/// merges the two by addition.
template <typename T>
Var<T> afb(const Var<T>& low, const Var<T>& high, const AFBParams<T>& params);

// --- transposed-convolution upsampling ---------------------------------------

template <typename T>
struct UpsampleParams {
  std::string name;
  Var<T> weight;  // [c_in, c_out, k, k]
  BatchNormRef<T> bn;
  int64_t stride = 2;
};

int64_t upsample_param_count(int64_t in_channels, int64_t out_channels, int64_t kernel = 2);

Shape describe_upsample(GraphBuilder& g, const std::string& prefix, const Shape& in,
                        int64_t out_channels, int64_t kernel = 2, int64_t stride = 2);

template <typename T>
UpsampleParams<T> bind_upsample(const ParamBinder<T>& p, const std::string& prefix,
                                int64_t stride = 2);

/// transposed conv -> bn -> relu6. Padding (k - s)/2 makes the output exactly
/// s times larger; k = s = 2 leaves it unpadded.
template <typename T>
Var<T> upsample_block(const Var<T>& x, const UpsampleParams<T>& params, const BnOptions<T>& bn);

}  // namespace lwanet::blocks
