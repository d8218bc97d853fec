#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lwanet/tensor.hpp"

namespace lwanet {

enum class ParamKind { kConvWeight, kBias, kBnGamma, kBnBeta, kRunningMean, kRunningVar };

/// A named parameter tensor as declared by a layer.
struct TensorDecl {
  std::string name;
  Shape shape;
  ParamKind kind = ParamKind::kConvWeight;
  int64_t fan_out = 1;  // used by the weight initializer

  bool trainable() const {
    return kind != ParamKind::kRunningMean && kind != ParamKind::kRunningVar;
  }
};

enum class LayerKind {
  kConv,
  kDepthwiseConv,
  kTransposedConv,
  kBatchNorm,
  kActivation,
  kGlobalAvgPool,
  kChannelScale,
  kAdd,
};

enum class Stage { kEncoder, kDecoder, kHead };

const char* to_string(LayerKind kind);
const char* to_string(Stage stage);

/// Static description of one layer of the network graph.
struct LayerNode {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  Stage stage = Stage::kEncoder;
  ConvSpec spec;  // convolution kinds only; channels for batchnorm
  Shape input;
  Shape output;
  std::vector<std::string> params;
};

/// Accumulates the parameter declarations and layer nodes of a network while
/// its blocks describe themselves.
class GraphBuilder {
 public:
  explicit GraphBuilder(int64_t batch = 1) : batch_(batch) {}

  void set_stage(Stage s) { stage_ = s; }
  Stage stage() const { return stage_; }

  Shape conv(const std::string& name, const ConvSpec& spec, const Shape& in);
  Shape depthwise(const std::string& name, const ConvSpec& spec, const Shape& in);
  Shape transposed(const std::string& name, const ConvSpec& spec, const Shape& in);
  Shape batchnorm(const std::string& name, const Shape& in);
  Shape activation(const std::string& name, const Shape& in);
  Shape global_avg_pool(const std::string& name, const Shape& in);
  Shape channel_scale(const std::string& name, const Shape& in);
  Shape add(const std::string& name, const Shape& a, const Shape& b);

  const std::vector<TensorDecl>& decls() const { return decls_; }
  const std::vector<LayerNode>& layers() const { return layers_; }

 private:
  void declare(LayerNode& node, TensorDecl decl);

  int64_t batch_;
  Stage stage_ = Stage::kEncoder;
  std::vector<TensorDecl> decls_;
  std::vector<LayerNode> layers_;
};

}  // namespace lwanet
