#include "lwanet/graph.hpp"

namespace lwanet {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDepthwiseConv: return "depthwise";
    case LayerKind::kTransposedConv: return "transposed_conv";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kGlobalAvgPool: return "global_avg_pool";
    case LayerKind::kChannelScale: return "channel_scale";
    case LayerKind::kAdd: return "add";
  }
  return "?";
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::kEncoder: return "encoder";
    case Stage::kDecoder: return "decoder";
    case Stage::kHead: return "head";
  }
  return "?";
}

void GraphBuilder::declare(LayerNode& node, TensorDecl decl) {
  node.params.push_back(decl.name);
  decls_.push_back(std::move(decl));
}

Shape GraphBuilder::conv(const std::string& name, const ConvSpec& spec, const Shape& in) {
  ConvSpec s = spec;
  s.name = name;
  LayerNode node{name, LayerKind::kConv, stage_, s, in, s.output_shape(in), {}};
  const int64_t fan_out = s.out_channels * s.kernel * s.kernel;
  declare(node, {name + ".weight", s.weight_shape(), ParamKind::kConvWeight, fan_out});
  if (s.has_bias) declare(node, {name + ".bias", {1, s.out_channels, 1, 1}, ParamKind::kBias, 1});
  layers_.push_back(node);
  return node.output;
}

Shape GraphBuilder::depthwise(const std::string& name, const ConvSpec& spec, const Shape& in) {
  ConvSpec s = spec;
  s.name = name;
  if (!s.is_depthwise() && !(s.groups == 1 && s.in_channels == 1 && s.out_channels == 1)) {
    throw ShapeError("layer " + name + ": not a depthwise spec");
  }
  LayerNode node{name, LayerKind::kDepthwiseConv, stage_, s, in, s.output_shape(in), {}};
  const int64_t fan_out = s.out_channels * s.kernel * s.kernel;
  declare(node, {name + ".weight", s.weight_shape(), ParamKind::kConvWeight, fan_out});
  if (s.has_bias) declare(node, {name + ".bias", {1, s.out_channels, 1, 1}, ParamKind::kBias, 1});
  layers_.push_back(node);
  return node.output;
}

Shape GraphBuilder::transposed(const std::string& name, const ConvSpec& spec, const Shape& in) {
  ConvSpec s = spec;
  s.name = name;
  LayerNode node{name, LayerKind::kTransposedConv, stage_, s, in, s.transposed_output_shape(in), {}};
  const int64_t fan_out = s.in_channels * s.kernel * s.kernel;
  declare(node, {name + ".weight", s.transposed_weight_shape(), ParamKind::kConvWeight, fan_out});
  if (s.has_bias) declare(node, {name + ".bias", {1, s.out_channels, 1, 1}, ParamKind::kBias, 1});
  layers_.push_back(node);
  return node.output;
}

Shape GraphBuilder::batchnorm(const std::string& name, const Shape& in) {
  ConvSpec s;
  s.in_channels = s.out_channels = in.c;
  s.name = name;
  LayerNode node{name, LayerKind::kBatchNorm, stage_, s, in, in, {}};
  const Shape vec{1, in.c, 1, 1};
  declare(node, {name + ".weight", vec, ParamKind::kBnGamma, 1});
  declare(node, {name + ".bias", vec, ParamKind::kBnBeta, 1});
  declare(node, {name + ".running_mean", vec, ParamKind::kRunningMean, 1});
  declare(node, {name + ".running_var", vec, ParamKind::kRunningVar, 1});
  layers_.push_back(node);
  return in;
}

Shape GraphBuilder::activation(const std::string& name, const Shape& in) {
  layers_.push_back({name, LayerKind::kActivation, stage_, {}, in, in, {}});
  return in;
}

Shape GraphBuilder::global_avg_pool(const std::string& name, const Shape& in) {
  const Shape out{in.n, in.c, 1, 1};
  layers_.push_back({name, LayerKind::kGlobalAvgPool, stage_, {}, in, out, {}});
  return out;
}

Shape GraphBuilder::channel_scale(const std::string& name, const Shape& in) {
  layers_.push_back({name, LayerKind::kChannelScale, stage_, {}, in, in, {}});
  return in;
}

Shape GraphBuilder::add(const std::string& name, const Shape& a, const Shape& b) {
  if (!(a == b)) throw ShapeError(name + ": add of " + a.str() + " and " + b.str());
  layers_.push_back({name, LayerKind::kAdd, stage_, {}, a, a, {}});
  return a;
}

}  // namespace lwanet
