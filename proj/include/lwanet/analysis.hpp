#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwanet/graph.hpp"
#include "lwanet/network.hpp"

// Static cost model. One multiply-accumulate counts as one FLOP; batchnorm,
// activations, pooling, scaling and additions count as zero.
namespace lwanet {

struct LayerCount {
  int64_t macs = 0;
  int64_t params = 0;
};

/// Standard or grouped convolution: k*k*(d1/g)*d2*m_out*n_out MACs.
LayerCount count_layer(const ConvSpec& spec, const Shape& input);

/// Depthwise separable convolution as a unit: depthwise k x k followed by a
/// pointwise 1x1, with the two batchnorms in the parameter count.
struct DSConvDescriptor {
  int64_t channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 3;
  int64_t stride = 1;
};
LayerCount count_layer(const DSConvDescriptor& ds, const Shape& input);

/// MACs of one graph node (zero for non-convolution kinds).
int64_t node_macs(const LayerNode& node);

/// 1/d2 + 1/k^2.
double ds_cost_ratio(int64_t k, int64_t d1, int64_t d2);

/// Checks count(ds) * k^2 * d2 == count(standard) * (k^2 + d2) in exact
/// integer arithmetic for an m x n input (same padding, stride 1).
bool ds_cost_identity_exact(int64_t k, int64_t d1, int64_t d2, int64_t m, int64_t n);

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  Stage stage = Stage::kEncoder;
  Shape output;
  int64_t macs = 0;
  int64_t params = 0;            // batchnorm counted as 4 per channel
  int64_t trainable_params = 0;  // running statistics excluded
};

struct StageCost {
  int64_t macs = 0;
  int64_t params = 0;
  int64_t trainable_params = 0;
  double mac_percent = 0.0;
};

struct CostReport {
  Shape input;
  std::vector<LayerCost> rows;
  StageCost encoder, decoder, head;
  int64_t total_macs = 0;
  int64_t total_params = 0;
  int64_t total_trainable_params = 0;

  const StageCost& stage(Stage s) const;
  /// `flops_per_mac` = 2 reports the multiply and the add separately.
  std::string to_table(int flops_per_mac = 1, bool per_layer = true) const;
  nlohmann::ordered_json to_json(int flops_per_mac = 1, bool per_layer = true) const;
};

CostReport count_model(const NetworkConfig& cfg, const Shape& input);
template <typename T>
CostReport count_model(const Model<T>& model, const Shape& input) {
  return count_model(model.config(), input);
}

struct LatencyStats {
  Shape input;
  int warmup = 0;
  int iters = 0;
  int workers = 1;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  double fps = 0.0;

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

/// Times eval-mode forward passes. Each timed iteration also normalizes a
/// raw [0,1] image into the network input.
LatencyStats benchmark_latency(Model<float>& model, const Shape& input, int warmup, int iters,
                               uint64_t seed = 0);

}  // namespace lwanet
