#include "lwanet/run_config.hpp"

#include <cstdlib>
#include <fstream>

namespace lwanet {

namespace {

DataConfig data_from_json(const nlohmann::json& j) {
  DataConfig d;
  if (!j.is_object()) throw ConfigError("data config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "root") d.root = v.get<std::string>();
    else if (key == "train_split") d.train_split = v.get<std::string>();
    else if (key == "val_split") d.val_split = v.get<std::string>();
    else if (key == "synthetic") d.synthetic = v.get<int64_t>();
    else if (key == "synthetic_classes") d.synthetic_classes = v.get<int64_t>();
    else if (key == "synthetic_seed") d.synthetic_seed = v.get<uint64_t>();
    else throw ConfigError("unknown key data." + key);
  }
  return d;
}

}  // namespace

void RunConfig::validate() const {
  try {
    network.validate();
    train.validate();
    augment.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (data.synthetic < 0) throw ConfigError("data.synthetic must be >= 0");
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["network"] = network.to_json();
  j["train"] = train.to_json();
  j["augment"] = augment.to_json();
  j["data"] = {{"root", data.root},
               {"train_split", data.train_split},
               {"val_split", data.val_split},
               {"synthetic", data.synthetic},
               {"synthetic_classes", data.synthetic_classes},
               {"synthetic_seed", data.synthetic_seed}};
  j["workers"] = workers;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "network") c.network = NetworkConfig::from_json(v);
      else if (key == "train") c.train = TrainConfig::from_json(v);
      else if (key == "augment") c.augment = AugmentConfig::from_json(v);
      else if (key == "data") c.data = data_from_json(v);
      else if (key == "workers") c.workers = v.get<int>();
      else throw ConfigError("unknown key " + key);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.train.augmentation = c.augment;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* s = std::getenv("LWA_SEED"); s != nullptr && *s != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == nullptr || *end != '\0') throw ConfigError(std::string("LWA_SEED is not an integer: ") + s);
    cfg.train.seed = v;
  }
}

}  // namespace lwanet
