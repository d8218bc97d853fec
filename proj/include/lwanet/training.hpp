#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwanet/data.hpp"
#include "lwanet/loss_metrics.hpp"
#include "lwanet/network.hpp"

namespace lwanet {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t batch_size = 16;
  double decay_factor = 0.8;
  int64_t decay_period = 30;
  std::string decay_unit = "epoch";  // or "step"
  int64_t epochs = 100;
  int64_t max_steps = 0;  // 0: no step limit
  double gamma = 6.0;
  uint64_t seed = 0;
  std::string pretrained_encoder;
  bool augment = true;
  AugmentConfig augmentation;  // serialized separately, under "augment"
  int64_t pool_size = 0;  // > 0: train on a fixed pre-augmented pool
  double val_fraction = 0.1;
  int64_t checkpoint_every = 1;  // epochs; 0 disables periodic checkpoints
  std::string out_dir;           // empty: nothing is written
  MetricOptions metrics;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// lr0 * factor^floor(t / period), t counted in the configured unit.
double lr_schedule(int64_t t, const TrainConfig& cfg);

template <typename T>
struct AdamState {
  int64_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

/// Bias-corrected Adam over every trainable tensor of the store.
template <typename T>
void adam_step(ParamStore<T>& params, const GradStore<T>& grads, AdamState<T>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct EpochRecord {
  int64_t epoch = 0;
  int64_t steps = 0;  // cumulative
  double lr = 0.0;
  double train_loss = 0.0;
  double val_mdice = 0.0;
  double val_miou = 0.0;
  double wall_s = 0.0;

  nlohmann::ordered_json to_json() const;
};

struct TrainState {
  int64_t step = 0;
  int64_t epoch = 0;  // next epoch to run
  double lr = 0.0;
  double best_val_mdice = -1.0;
  int64_t best_epoch = -1;
  AdamState<float> adam;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  std::function<void(int64_t step, double loss, double lr)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  TrainState state;
  bool nan_abort = false;
};

/// Runs epochs [state.epoch, cfg.epochs), stopping early at cfg.max_steps.
/// Validation metrics use `val`, or `train` when `val` is empty. Throws
/// TrainingError on a non-finite loss.
TrainResult train(Model<float>& model, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& val, const TrainConfig& cfg, TrainState state = {},
                  const TrainHooks& hooks = {});

/// One optimizer step on a batch; returns the loss.
double train_step(Model<float>& model, const SegBatch& batch, const FocalConfig& focal,
                  AdamState<float>& adam, double lr, const TrainConfig& cfg);

/// Eval-mode prediction at full resolution, accumulated over the samples.
ConfusionAccumulator evaluate(Model<float>& model, const std::vector<SegSample>& samples,
                              int64_t batch_size = 8);

/// Parameters, Adam moments and counters in one LWAW file.
void save_checkpoint(const std::string& path, const Model<float>& model, const TrainState& state,
                     const TrainConfig& cfg);
TrainState load_checkpoint(const std::string& path, Model<float>& model);

}  // namespace lwanet
