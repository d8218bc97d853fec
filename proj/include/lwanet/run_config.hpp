#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "lwanet/data.hpp"
#include "lwanet/network.hpp"
#include "lwanet/training.hpp"

namespace lwanet {

/// Usage-level configuration problem (unknown key, bad value, bad type).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string root;
  std::string train_split = "train";
  std::string val_split;      // empty: hold out val_fraction of the training split
  int64_t synthetic = 0;      // > 0: generate this many samples instead of reading root
  int64_t synthetic_classes = 0;  // 0: network.num_classes
  uint64_t synthetic_seed = 0;
};

/// Top-level JSON document: {"network": {...}, "train": {...},
/// "augment": {...}, "data": {...}, "workers": n}.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  AugmentConfig augment;
  DataConfig data;
  int workers = 1;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

/// LWA_SEED replaces train.seed when set.
void apply_env_overrides(RunConfig& cfg);

}  // namespace lwanet
