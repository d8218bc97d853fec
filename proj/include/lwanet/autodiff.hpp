#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lwanet/kernels.hpp"
#include "lwanet/tensor.hpp"

namespace lwanet {

template <typename T>
class Tape;

/// Handle to a tensor value, optionally recorded on a tape. Untracked values
/// (no tape) behave as constants: ops on them compute forward only.
template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value) {
    Var v;
    v.value_ = std::make_shared<const Tensor<T>>(std::move(value));
    return v;
  }
  static Var constant(std::shared_ptr<const Tensor<T>> value) {
    Var v;
    v.value_ = std::move(value);
    return v;
  }

  const Tensor<T>& value() const { return *value_; }
  const std::shared_ptr<const Tensor<T>>& shared() const { return value_; }
  const Shape& shape() const { return value_->shape(); }
  bool defined() const { return value_ != nullptr; }
  bool tracked() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  std::size_t node() const { return node_; }

 private:
  friend class Tape<T>;
  std::shared_ptr<const Tensor<T>> value_;
  Tape<T>* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Gradients keyed by parameter name.
template <typename T>
using GradStore = std::map<std::string, Tensor<T>>;

template <typename T>
struct Gradients {
  GradStore<T> named;
  std::vector<Tensor<T>> by_node;

  /// Gradient of the loss w.r.t. a tracked var; zeros if it had no path.
  Tensor<T> of(const Var<T>& v) const;
};

/// Computes input gradients from the output gradient. `needs[i]` tells
/// whether input i requires a gradient; entries left empty are skipped.
template <typename T>
using BackwardFn =
    std::function<std::vector<Tensor<T>>(const Tensor<T>& grad_out, const std::vector<bool>& needs)>;

template <typename T>
struct TapeNode {
  std::string op;
  std::vector<std::size_t> inputs;
  BackwardFn<T> backward;
  std::shared_ptr<const Tensor<T>> value;
  bool requires_grad = false;
  std::string param_name;
};

/// Reverse-mode tape. Nodes are appended in execution order, which is a
/// topological order of the recorded graph.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> parameter(const std::string& name, std::shared_ptr<const Tensor<T>> value);
  Var<T> input(Tensor<T> value, bool requires_grad = true);

  Var<T> record(std::string op, Tensor<T> out, std::vector<Var<T>> inputs, BackwardFn<T> backward);

  /// Seeds d(loss)/d(loss) = 1 and walks the tape once in reverse.
  Gradients<T> backward(const Var<T>& loss) const;

  std::size_t size() const { return nodes_.size(); }
  const TapeNode<T>& node(std::size_t i) const { return nodes_[i]; }

  /// Smallest distance to a ReLU/ReLU6 kink seen by ops on this tape, when
  /// kink tracking is enabled (gradient checking turns it on).
  T kink_margin() const { return kink_margin_; }
  bool tracks_kinks() const { return track_kinks_; }
  void set_track_kinks(bool on) { track_kinks_ = on; }
  void note_kink_distance(T d) {
    if (d < kink_margin_) kink_margin_ = d;
  }

 private:
  std::vector<TapeNode<T>> nodes_;
  bool track_kinks_ = false;
  T kink_margin_ = std::numeric_limits<T>::infinity();
};

enum class BnMode { kTrain, kEval };

template <typename T>
struct BatchNormRef {
  Var<T> gamma;
  Var<T> beta;
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
};

template <typename T>
struct BnOptions {
  BnMode mode = BnMode::kEval;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Differentiable ops over Var. Results are tracked iff some input is tracked.
namespace op {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<Var<T>>* bias, const ConvSpec& spec);
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<Var<T>>* bias,
                        const ConvSpec& spec);
template <typename T>
Var<T> transposed_conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<Var<T>>* bias,
                         const ConvSpec& spec);
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> relu6(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> softmax_channels(const Var<T>& x);
template <typename T>
Var<T> batchnorm(const Var<T>& x, const BatchNormRef<T>& bn, const BnOptions<T>& opts);
template <typename T>
Var<T> add(const Var<T>& x, const Var<T>& y);
template <typename T>
Var<T> broadcast_mul_channels(const Var<T>& x, const Var<T>& a);
template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, int64_t factor);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);
/// Sum of all entries as a [1,1,1,1] scalar.
template <typename T>
Var<T> sum(const Var<T>& x);
/// Sum of x * weights, with weights held constant.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

}  // namespace op

/// Finds the tape shared by a set of inputs (null if none is tracked).
template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars);

/// Central-difference gradient check. `fn` maps the input vars to an output;
/// non-scalar outputs are reduced with a fixed random projection. Returns
/// max |analytic - numeric| / max(1, |analytic|, |numeric|) over every input
/// coordinate. When a ReLU kink lies within `kink_guard` of the evaluation
/// point, `resample` is asked for new inputs (up to `max_resamples` times).
struct GradCheckOptions {
  double step = 1e-5;
  double kink_guard = 1e-3;
  int max_resamples = 50;
  uint64_t projection_seed = 0x5eed;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int resamples = 0;
  int64_t coordinates = 0;
};

using GradCheckFn = std::function<Var<double>(std::span<const Var<double>>)>;
using ResampleFn = std::function<void(std::vector<Tensor<double>>&)>;

GradCheckResult grad_check(const GradCheckFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& opts = {}, const ResampleFn& resample = {});

}  // namespace lwanet
