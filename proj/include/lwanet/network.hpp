#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwanet/autodiff.hpp"
#include "lwanet/graph.hpp"
#include "lwanet/param_store.hpp"

namespace lwanet {

struct NetworkConfig {
  int64_t num_classes = 11;
  int64_t height = 544;  // nominal input size, used for build-time shape checks
  int64_t width = 960;
  double width_multiplier = 1.0;
  int64_t se_ratio = 4;
  std::vector<int64_t> decoder_widths{96, 32, 24};  // strides 16, 8, 4
  int64_t upsample_kernel = 2;
  bool afb_enabled = true;
  bool keep_final_encoder_conv = true;
  std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
  std::array<double, 3> norm_std{0.229, 0.224, 0.225};

  /// Throws std::invalid_argument on the first violated constraint.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults; unknown keys throw.
  static NetworkConfig from_json(const nlohmann::json& j);
};

/// Round to the nearest multiple of `divisor`, never dropping below 90% of v.
int64_t make_divisible(double v, int64_t divisor = 8);

struct EncoderStage {
  int64_t expand_ratio;
  int64_t channels;
  int64_t repeats;
  int64_t stride;
};

/// The MobileNetV2 (t, c, n, s) table.
const std::vector<EncoderStage>& mobilenet_v2_stages();

/// Output channels of the stem and of every encoder stage (and the final
/// conv when kept), after the width multiplier.
std::vector<int64_t> encoder_channel_sequence(const NetworkConfig& cfg);

/// Names of the blocks whose outputs are tapped at strides 4, 8, 16, 32.
struct TapPoints {
  std::array<std::string, 4> names;
  std::array<Shape, 4> shapes;
};

struct NetworkGraph {
  std::vector<TensorDecl> decls;
  std::vector<LayerNode> layers;
  TapPoints taps;
  Shape logits;
};

/// Declares the whole network for an input of the given shape. Throws
/// ShapeError when the spatial size is not divisible by 32.
NetworkGraph describe_network(const NetworkConfig& cfg, const Shape& input);

/// True for tensors owned by the encoder (the transfer-learning unit).
bool is_encoder_param(const std::string& name);

template <typename T>
struct ForwardResult {
  Var<T> logits;               // [n, classes, h/4, w/4]
  std::array<Var<T>, 4> taps;  // encoder features at strides 4, 8, 16, 32
};

template <typename T>
class Model {
 public:
  explicit Model(NetworkConfig cfg, uint64_t seed = 0);

  const NetworkConfig& config() const { return cfg_; }
  const NetworkGraph& graph() const { return graph_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// With a tape, parameters are recorded as leaves; `x` may be tracked or
  /// constant. Train mode uses batch statistics and updates running stats.
  ForwardResult<T> forward(Tape<T>* tape, const Var<T>& x, BnMode mode);

  /// Eval-mode logits without recording.
  Tensor<T> logits(const Tensor<T>& x);

 private:
  NetworkConfig cfg_;
  NetworkGraph graph_;
  ParamStore<T> params_;
};

/// Per-pixel argmax after bilinear upsampling of the logits to `factor`
/// times their resolution. Returns class ids in [n, h, w] order.
template <typename T>
std::vector<int32_t> predict_classes(const Tensor<T>& logits, int64_t factor);

}  // namespace lwanet
