#include "lwanet/blocks.hpp"

#include <cmath>

namespace lwanet::blocks {

namespace {

ConvSpec square_conv(const std::string& name, int64_t in, int64_t out, int64_t kernel,
                     int64_t stride, int64_t groups, bool bias = false) {
  ConvSpec s;
  s.name = name;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = (kernel - 1) / 2;
  s.groups = groups;
  s.has_bias = bias;
  return s;
}

ConvSpec depthwise_spec(const std::string& name, const Shape& weight, int64_t stride) {
  return square_conv(name, weight.n, weight.n, weight.h, stride, weight.n);
}

ConvSpec pointwise_spec(const std::string& name, const Shape& weight, bool bias = false) {
  return square_conv(name, weight.c, weight.n, 1, 1, 1, bias);
}

}  // namespace

// --- conv -> batchnorm -> relu6 ----------------------------------------------

Shape describe_conv_bn(GraphBuilder& g, const std::string& prefix, const Shape& in,
                       int64_t out_channels, int64_t kernel, int64_t stride, bool activation) {
  Shape s = g.conv(prefix + ".conv", square_conv(prefix + ".conv", in.c, out_channels, kernel, stride, 1), in);
  s = g.batchnorm(prefix + ".bn", s);
  if (activation) s = g.activation(prefix + ".relu6", s);
  return s;
}

template <typename T>
ConvBnParams<T> bind_conv_bn(const ParamBinder<T>& p, const std::string& prefix, int64_t stride,
                             bool activation) {
  return {prefix, p(prefix + ".conv.weight"), p.bn(prefix + ".bn"), stride, activation};
}

template <typename T>
Var<T> conv_bn(const Var<T>& x, const ConvBnParams<T>& params, const BnOptions<T>& bn) {
  const Shape w = params.weight.shape();
  const ConvSpec spec = square_conv(params.name + ".conv", w.c, w.n, w.h, params.stride, 1);
  Var<T> y = op::batchnorm(op::conv2d(x, params.weight, nullptr, spec), params.bn, bn);
  return params.activation ? op::relu6(y) : y;
}

// --- depthwise separable convolution -----------------------------------------

int64_t ds_conv_param_count(int64_t channels, int64_t out_channels, int64_t kernel) {
  return kernel * kernel * channels + channels * out_channels + 4 * channels + 4 * out_channels;
}

Shape describe_ds_conv(GraphBuilder& g, const std::string& prefix, const Shape& in,
                       int64_t out_channels, int64_t kernel, int64_t stride) {
  Shape s = g.depthwise(prefix + ".depthwise",
                        square_conv(prefix + ".depthwise", in.c, in.c, kernel, stride, in.c), in);
  s = g.batchnorm(prefix + ".bn1", s);
  s = g.activation(prefix + ".relu6_1", s);
  s = g.conv(prefix + ".pointwise", square_conv(prefix + ".pointwise", in.c, out_channels, 1, 1, 1), s);
  s = g.batchnorm(prefix + ".bn2", s);
  return g.activation(prefix + ".relu6_2", s);
}

template <typename T>
DSConvParams<T> bind_ds_conv(const ParamBinder<T>& p, const std::string& prefix) {
  return {prefix, p(prefix + ".depthwise.weight"), p.bn(prefix + ".bn1"),
          p(prefix + ".pointwise.weight"), p.bn(prefix + ".bn2")};
}

template <typename T>
Var<T> ds_conv(const Var<T>& x, const DSConvParams<T>& params, int64_t stride,
               const BnOptions<T>& bn) {
  const ConvSpec dw = depthwise_spec(params.name + ".depthwise", params.depthwise.shape(), stride);
  const ConvSpec pw = pointwise_spec(params.name + ".pointwise", params.pointwise.shape());
  Var<T> y = op::relu6(op::batchnorm(op::depthwise_conv2d(x, params.depthwise, nullptr, dw), params.bn1, bn));
  return op::relu6(op::batchnorm(op::conv2d(y, params.pointwise, nullptr, pw), params.bn2, bn));
}

// --- MobileNetV2 inverted residual -------------------------------------------

int64_t expanded_channels(int64_t in_channels, double expand_ratio) {
  return static_cast<int64_t>(std::llround(static_cast<double>(in_channels) * expand_ratio));
}

int64_t inverted_residual_param_count(int64_t in_channels, int64_t out_channels,
                                      double expand_ratio, int64_t kernel) {
  const int64_t hidden = expanded_channels(in_channels, expand_ratio);
  int64_t total = 0;
  if (expand_ratio != 1.0) total += in_channels * hidden + 4 * hidden;
  total += kernel * kernel * hidden + 4 * hidden;
  total += hidden * out_channels + 4 * out_channels;
  return total;
}

Shape describe_inverted_residual(GraphBuilder& g, const std::string& prefix, const Shape& in,
                                 int64_t out_channels, double expand_ratio, int64_t stride) {
  const int64_t hidden = expanded_channels(in.c, expand_ratio);
  Shape s = in;
  if (expand_ratio != 1.0) {
    s = g.conv(prefix + ".expand", square_conv(prefix + ".expand", in.c, hidden, 1, 1, 1), s);
    s = g.batchnorm(prefix + ".expand_bn", s);
    s = g.activation(prefix + ".expand_relu6", s);
  }
  s = g.depthwise(prefix + ".depthwise", square_conv(prefix + ".depthwise", hidden, hidden, 3, stride, hidden), s);
  s = g.batchnorm(prefix + ".depthwise_bn", s);
  s = g.activation(prefix + ".depthwise_relu6", s);
  s = g.conv(prefix + ".project", square_conv(prefix + ".project", hidden, out_channels, 1, 1, 1), s);
  s = g.batchnorm(prefix + ".project_bn", s);
  if (stride == 1 && in.c == out_channels) s = g.add(prefix + ".residual", in, s);
  return s;
}

template <typename T>
InvertedResidualParams<T> bind_inverted_residual(const ParamBinder<T>& p,
                                                 const std::string& prefix, int64_t stride) {
  InvertedResidualParams<T> out;
  out.name = prefix;
  if (p.has(prefix + ".expand.weight")) {
    out.expand = p(prefix + ".expand.weight");
    out.expand_bn = p.bn(prefix + ".expand_bn");
  }
  out.depthwise = p(prefix + ".depthwise.weight");
  out.depthwise_bn = p.bn(prefix + ".depthwise_bn");
  out.project = p(prefix + ".project.weight");
  out.project_bn = p.bn(prefix + ".project_bn");
  out.stride = stride;
  const int64_t in_channels = out.expand ? out.expand->shape().c : out.depthwise.shape().n;
  out.residual = stride == 1 && in_channels == out.project.shape().n;
  return out;
}

template <typename T>
Var<T> inverted_residual_branch(const Var<T>& x, const InvertedResidualParams<T>& params,
                                const BnOptions<T>& bn) {
  Var<T> y = x;
  if (params.expand) {
    const ConvSpec ex = pointwise_spec(params.name + ".expand", params.expand->shape());
    y = op::relu6(op::batchnorm(op::conv2d(y, *params.expand, nullptr, ex), *params.expand_bn, bn));
  }
  const ConvSpec dw = depthwise_spec(params.name + ".depthwise", params.depthwise.shape(), params.stride);
  y = op::relu6(op::batchnorm(op::depthwise_conv2d(y, params.depthwise, nullptr, dw), params.depthwise_bn, bn));
  const ConvSpec pr = pointwise_spec(params.name + ".project", params.project.shape());
  return op::batchnorm(op::conv2d(y, params.project, nullptr, pr), params.project_bn, bn);
}

template <typename T>
Var<T> inverted_residual(const Var<T>& x, const InvertedResidualParams<T>& params,
                         const BnOptions<T>& bn) {
  Var<T> branch = inverted_residual_branch(x, params, bn);
  if (!params.residual) return branch;
  if (!(branch.shape() == x.shape())) {
    throw ShapeError("layer " + params.name + ": residual connection needs matching shapes, input " +
                     x.shape().str() + " vs branch " + branch.shape().str());
  }
  return op::add(x, branch);
}

// --- attention fusion block --------------------------------------------------

int64_t se_param_count(int64_t channels, int64_t reduction) {
  const int64_t hidden = channels / reduction;
  return hidden * channels + hidden + channels * hidden + channels;
}

int64_t afb_param_count(int64_t channels, int64_t reduction) {
  return 2 * se_param_count(channels, reduction);
}

namespace {

Shape describe_se_branch(GraphBuilder& g, const std::string& prefix, const Shape& x,
                         int64_t reduction) {
  const int64_t hidden = x.c / reduction;
  Shape s = g.global_avg_pool(prefix + ".gap", x);
  s = g.conv(prefix + ".alpha", square_conv(prefix + ".alpha", x.c, hidden, 1, 1, 1, true), s);
  s = g.activation(prefix + ".relu", s);
  s = g.conv(prefix + ".beta", square_conv(prefix + ".beta", hidden, x.c, 1, 1, 1, true), s);
  g.activation(prefix + ".sigmoid", s);
  return g.channel_scale(prefix + ".scale", x);
}

}  // namespace

Shape describe_afb(GraphBuilder& g, const std::string& prefix, const Shape& low,
                   const Shape& high, int64_t reduction) {
  if (!(low == high)) {
    throw ShapeError("layer " + prefix + ": attention fusion needs equal shapes, low " + low.str() +
                     " vs high " + high.str());
  }
  if (reduction < 1 || low.c % reduction != 0) {
    throw ShapeError("layer " + prefix + ": channels " + std::to_string(low.c) +
                     " not divisible by reduction " + std::to_string(reduction));
  }
  const Shape a = describe_se_branch(g, prefix + ".low", low, reduction);
  const Shape b = describe_se_branch(g, prefix + ".high", high, reduction);
  return g.add(prefix + ".merge", a, b);
}

template <typename T>
AFBParams<T> bind_afb(const ParamBinder<T>& p, const std::string& prefix) {
  auto se = [&](const std::string& branch) {
    const std::string b = prefix + "." + branch;
    return SEParams<T>{p(b + ".alpha.weight"), p(b + ".alpha.bias"), p(b + ".beta.weight"),
                       p(b + ".beta.bias")};
  };
  return {prefix, se("low"), se("high")};
}

template <typename T>
Var<T> se_attention(const Var<T>& x, const SEParams<T>& se) {
  const ConvSpec alpha = pointwise_spec("se.alpha", se.w_alpha.shape(), true);
  const ConvSpec beta = pointwise_spec("se.beta", se.w_beta.shape(), true);
  Var<T> pooled = op::global_avg_pool(x);
  Var<T> hidden = op::relu(op::conv2d(pooled, se.w_alpha, &se.b_alpha, alpha));
  return op::sigmoid(op::conv2d(hidden, se.w_beta, &se.b_beta, beta));
}

template <typename T>
Var<T> afb(const Var<T>& low, const Var<T>& high, const AFBParams<T>& params) {
  if (!(low.shape() == high.shape())) {
    throw ShapeError("layer " + params.name + ": attention fusion needs equal shapes, low " +
                     low.shape().str() + " vs high " + high.shape().str());
  }
  Var<T> low_hat = op::broadcast_mul_channels(low, se_attention(low, params.low));
  Var<T> high_hat = op::broadcast_mul_channels(high, se_attention(high, params.high));
  return op::add(low_hat, high_hat);
}

// --- transposed-convolution upsampling ---------------------------------------

int64_t upsample_param_count(int64_t in_channels, int64_t out_channels, int64_t kernel) {
  return in_channels * out_channels * kernel * kernel + 4 * out_channels;
}

Shape describe_upsample(GraphBuilder& g, const std::string& prefix, const Shape& in,
                        int64_t out_channels, int64_t kernel, int64_t stride) {
  ConvSpec spec = square_conv(prefix + ".tconv", in.c, out_channels, kernel, stride, 1);
  spec.padding = (kernel - stride) / 2;
  Shape s = g.transposed(prefix + ".tconv", spec, in);
  s = g.batchnorm(prefix + ".bn", s);
  return g.activation(prefix + ".relu6", s);
}

template <typename T>
UpsampleParams<T> bind_upsample(const ParamBinder<T>& p, const std::string& prefix, int64_t stride) {
  return {prefix, p(prefix + ".tconv.weight"), p.bn(prefix + ".bn"), stride};
}

template <typename T>
Var<T> upsample_block(const Var<T>& x, const UpsampleParams<T>& params, const BnOptions<T>& bn) {
  const Shape w = params.weight.shape();
  ConvSpec spec = square_conv(params.name + ".tconv", w.n, w.c, w.h, params.stride, 1);
  spec.padding = (w.h - params.stride) / 2;
  return op::relu6(op::batchnorm(op::transposed_conv2d(x, params.weight, nullptr, spec), params.bn, bn));
}

#define LWANET_INSTANTIATE_BLOCKS(T)                                                            \
  template ConvBnParams<T> bind_conv_bn(const ParamBinder<T>&, const std::string&, int64_t, bool); \
  template Var<T> conv_bn(const Var<T>&, const ConvBnParams<T>&, const BnOptions<T>&);          \
  template DSConvParams<T> bind_ds_conv(const ParamBinder<T>&, const std::string&);             \
  template Var<T> ds_conv(const Var<T>&, const DSConvParams<T>&, int64_t, const BnOptions<T>&); \
  template InvertedResidualParams<T> bind_inverted_residual(const ParamBinder<T>&,              \
                                                            const std::string&, int64_t);       \
  template Var<T> inverted_residual_branch(const Var<T>&, const InvertedResidualParams<T>&,     \
                                           const BnOptions<T>&);                                \
  template Var<T> inverted_residual(const Var<T>&, const InvertedResidualParams<T>&,            \
                                    const BnOptions<T>&);                                       \
  template AFBParams<T> bind_afb(const ParamBinder<T>&, const std::string&);                    \
  template Var<T> se_attention(const Var<T>&, const SEParams<T>&);                              \
  template Var<T> afb(const Var<T>&, const Var<T>&, const AFBParams<T>&);                       \
  template UpsampleParams<T> bind_upsample(const ParamBinder<T>&, const std::string&, int64_t); \
  template Var<T> upsample_block(const Var<T>&, const UpsampleParams<T>&, const BnOptions<T>&);

LWANET_INSTANTIATE_BLOCKS(float)
LWANET_INSTANTIATE_BLOCKS(double)

}  // namespace lwanet::blocks
