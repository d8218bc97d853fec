#include "lwanet/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "lwanet/weights_io.hpp"

namespace fs = std::filesystem;

namespace lwanet {

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("train config: " + msg);
  };
  require(lr > 0, "lr must be positive");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must be in [0,1)");
  require(adam_eps > 0, "adam_eps must be positive");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(decay_factor > 0 && decay_factor <= 1, "decay_factor must be in (0,1]");
  require(decay_period >= 1, "decay_period must be >= 1");
  require(decay_unit == "epoch" || decay_unit == "step", "decay_unit must be \"epoch\" or \"step\"");
  require(epochs >= 0, "epochs must be >= 0");
  require(max_steps >= 0, "max_steps must be >= 0");
  require(gamma >= 0, "gamma must be >= 0");
  require(pool_size >= 0, "pool_size must be >= 0");
  require(val_fraction >= 0 && val_fraction < 1, "val_fraction must be in [0,1)");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  augmentation.validate();
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"batch_size", batch_size},
          {"decay_factor", decay_factor},
          {"decay_period", decay_period},
          {"decay_unit", decay_unit},
          {"epochs", epochs},
          {"max_steps", max_steps},
          {"gamma", gamma},
          {"seed", seed},
          {"pretrained_encoder", pretrained_encoder},
          {"augment", augment},
          {"pool_size", pool_size},
          {"val_fraction", val_fraction},
          {"checkpoint_every", checkpoint_every},
          {"out_dir", out_dir},
          {"metrics_present_only", metrics.present_only},
          {"metrics_include_background", metrics.include_background}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "lr") c.lr = v.get<double>();
    else if (key == "beta1") c.beta1 = v.get<double>();
    else if (key == "beta2") c.beta2 = v.get<double>();
    else if (key == "adam_eps") c.adam_eps = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<int64_t>();
    else if (key == "decay_factor") c.decay_factor = v.get<double>();
    else if (key == "decay_period") c.decay_period = v.get<int64_t>();
    else if (key == "decay_unit") c.decay_unit = v.get<std::string>();
    else if (key == "epochs") c.epochs = v.get<int64_t>();
    else if (key == "max_steps") c.max_steps = v.get<int64_t>();
    else if (key == "gamma") c.gamma = v.get<double>();
    else if (key == "seed") c.seed = v.get<uint64_t>();
    else if (key == "pretrained_encoder") c.pretrained_encoder = v.get<std::string>();
    else if (key == "augment") c.augment = v.get<bool>();
    else if (key == "pool_size") c.pool_size = v.get<int64_t>();
    else if (key == "val_fraction") c.val_fraction = v.get<double>();
    else if (key == "checkpoint_every") c.checkpoint_every = v.get<int64_t>();
    else if (key == "out_dir") c.out_dir = v.get<std::string>();
    else if (key == "metrics_present_only") c.metrics.present_only = v.get<bool>();
    else if (key == "metrics_include_background") c.metrics.include_background = v.get<bool>();
    else throw std::invalid_argument("unknown key train." + key);
  }
  return c;
}

double lr_schedule(int64_t t, const TrainConfig& cfg) {
  if (t < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  return cfg.lr * std::pow(cfg.decay_factor, static_cast<double>(t / cfg.decay_period));
}

template <typename T>
void adam_step(ParamStore<T>& params, const GradStore<T>& grads, AdamState<T>& state, double lr,
               double beta1, double beta2, double eps) {
  for (const auto& e : params.entries()) {
    if (!e.decl.trainable()) continue;
    auto g = grads.find(e.decl.name);
    if (g == grads.end()) throw std::invalid_argument("adam_step: no gradient for " + e.decl.name);
    if (!(g->second.shape() == e.decl.shape)) {
      throw ShapeError("adam_step: gradient of " + e.decl.name + " has shape " + g->second.shape().str() +
                       ", parameter " + e.decl.shape.str());
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  const double step_size = lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (const auto& e : params.entries()) {
    if (!e.decl.trainable()) continue;
    const Tensor<T>& g = grads.at(e.decl.name);
    auto [mit, m_new] = state.m.try_emplace(e.decl.name, e.decl.shape);
    auto [vit, v_new] = state.v.try_emplace(e.decl.name, e.decl.shape);
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    Tensor<T>& p = *e.value;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
      const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double denom = std::sqrt(static_cast<double>(v[i])) / sqrt_bc2 + eps;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step_size * static_cast<double>(m[i]) / denom);
    }
  }
}

template void adam_step(ParamStore<float>&, const GradStore<float>&, AdamState<float>&, double, double,
                        double, double);
template void adam_step(ParamStore<double>&, const GradStore<double>&, AdamState<double>&, double, double,
                        double, double);

nlohmann::ordered_json EpochRecord::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); };
  return {{"epoch", epoch},       {"lr", lr},       {"train_loss", num(train_loss)}, {"val_mdice", num(val_mdice)},
          {"val_miou", num(val_miou)}, {"wall_s", wall_s}, {"steps", steps}};
}

double train_step(Model<float>& model, const SegBatch& batch, const FocalConfig& focal,
                  AdamState<float>& adam, double lr, const TrainConfig& cfg) {
  Tape<float> tape;
  const Var<float> x = Var<float>::constant(batch.images);
  const ForwardResult<float> out = model.forward(&tape, x, BnMode::kTrain);
  const Var<float> full = op::bilinear_upsample(out.logits, x.shape().h / out.logits.shape().h);
  const Var<float> loss = focal_loss(full, batch.masks, focal);
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) return value;
  const Gradients<float> grads = tape.backward(loss);
  adam_step(model.params(), grads.named, adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  return value;
}

ConfusionAccumulator evaluate(Model<float>& model, const std::vector<SegSample>& samples, int64_t batch_size) {
  ConfusionAccumulator acc(model.config().num_classes);
  const NetworkConfig& nc = model.config();
  for (const auto& idx : batch_indices(static_cast<int64_t>(samples.size()), batch_size, std::nullopt)) {
    const SegBatch b = make_batch(samples, idx, nc.norm_mean, nc.norm_std);
    const Tensor<float> logits = model.logits(b.images);
    const std::vector<int32_t> pred = predict_classes(logits, b.images.shape().h / logits.shape().h);
    acc.update(std::span<const int32_t>(pred), std::span<const int32_t>(b.masks.data));
  }
  return acc;
}

namespace {

uint64_t epoch_seed(uint64_t seed, int64_t epoch) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<SegSample> augmented_epoch(const std::vector<SegSample>& src, const TrainConfig& cfg,
                                       int64_t epoch) {
  const AugmentConfig& aug = cfg.augmentation;
  std::vector<SegSample> out;
  out.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::mt19937_64 rng = sample_rng(aug.seed ^ cfg.seed, epoch, static_cast<int64_t>(i));
    out.push_back(augment(src[i], aug, rng));
  }
  return out;
}

std::vector<SegSample> augmented_pool(const std::vector<SegSample>& src, const TrainConfig& cfg) {
  const AugmentConfig& aug = cfg.augmentation;
  std::vector<SegSample> out;
  for (int64_t i = 0; i < cfg.pool_size; ++i) {
    const SegSample& s = src[static_cast<std::size_t>(i) % src.size()];
    if (i < static_cast<int64_t>(src.size())) {
      out.push_back(s);
      continue;
    }
    std::mt19937_64 rng = sample_rng(aug.seed ^ cfg.seed, -1, i);
    SegSample a = augment(s, aug, rng);
    a.name = s.name + "_aug" + std::to_string(i);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace

TrainResult train(Model<float>& model, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& val, const TrainConfig& cfg, TrainState state,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: training set is empty");
  FocalConfig focal;
  focal.gamma = cfg.gamma;

  if (state.step == 0 && state.epoch == 0 && !cfg.pretrained_encoder.empty()) {
    import_pretrained_encoder(model, cfg.pretrained_encoder);
  }
  const bool writes = !cfg.out_dir.empty();
  const fs::path out_dir(cfg.out_dir);
  std::ofstream history;
  if (writes) {
    fs::create_directories(out_dir);
    const bool fresh = state.epoch == 0;
    history.open(out_dir / "history.jsonl", fresh ? std::ios::trunc : std::ios::app);
    if (!history) throw std::runtime_error("cannot write " + (out_dir / "history.jsonl").string());
  }

  const std::vector<SegSample> pool = cfg.pool_size > 0 ? augmented_pool(train_set, cfg) : train_set;
  const std::vector<SegSample>& eval_set = val.empty() ? train_set : val;
  const NetworkConfig& nc = model.config();

  TrainResult result;
  for (; state.epoch < cfg.epochs; ++state.epoch) {
    if (cfg.max_steps > 0 && state.step >= cfg.max_steps) break;
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<SegSample> epoch_samples =
        cfg.augment && cfg.pool_size == 0 ? augmented_epoch(pool, cfg, state.epoch) : pool;
    const auto batches = batch_indices(static_cast<int64_t>(epoch_samples.size()), cfg.batch_size,
                                       epoch_seed(cfg.seed, state.epoch));
    double loss_sum = 0.0;
    int64_t loss_count = 0;
    for (const auto& idx : batches) {
      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) break;
      const int64_t t = cfg.decay_unit == "step" ? state.step : state.epoch;
      state.lr = lr_schedule(t, cfg);
      const SegBatch batch = make_batch(epoch_samples, idx, nc.norm_mean, nc.norm_std);
      const double loss = train_step(model, batch, focal, state.adam, state.lr, cfg);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(state.step) + " (epoch " +
                            std::to_string(state.epoch) + ", lr " + std::to_string(state.lr) + ")");
      }
      ++state.step;
      loss_sum += loss;
      ++loss_count;
      if (hooks.on_step) hooks.on_step(state.step, loss, state.lr);
    }

    const ConfusionAccumulator acc = evaluate(model, eval_set, cfg.batch_size);
    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.steps = state.step;
    rec.lr = state.lr;
    rec.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    rec.val_mdice = mean_dice(acc, cfg.metrics);
    rec.val_miou = mean_iou(acc, cfg.metrics);
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.push_back(rec);

    const bool improved = std::isfinite(rec.val_mdice) && rec.val_mdice > state.best_val_mdice;
    if (improved) {
      state.best_val_mdice = rec.val_mdice;
      state.best_epoch = rec.epoch;
    }
    if (writes) {
      nlohmann::ordered_json line = rec.to_json();
      line["afb_enabled"] = nc.afb_enabled;
      line["pretrained"] = !cfg.pretrained_encoder.empty();
      history << line.dump() << '\n' << std::flush;
      if (improved) save_weights((out_dir / "best.lwaw").string(), model);
    }
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (writes && cfg.checkpoint_every > 0 && (state.epoch + 1) % cfg.checkpoint_every == 0) {
      TrainState next = state;
      ++next.epoch;
      save_checkpoint((out_dir / "checkpoint.lwaw").string(), model, next, cfg);
    }
  }
  if (writes) save_weights((out_dir / "model.lwaw").string(), model);
  result.state = std::move(state);
  return result;
}

void save_checkpoint(const std::string& path, const Model<float>& model, const TrainState& state,
                     const TrainConfig& cfg) {
  WeightArchive a = archive_from_store(model.params(), model.config().to_json());
  for (const auto& e : model.params().entries()) {
    if (!e.decl.trainable()) continue;
    auto m = state.adam.m.find(e.decl.name);
    auto v = state.adam.v.find(e.decl.name);
    if (m == state.adam.m.end() || v == state.adam.v.end()) continue;
    a.entries.push_back({"optim.m." + e.decl.name, "adam_m", m->second});
    a.entries.push_back({"optim.v." + e.decl.name, "adam_v", v->second});
  }
  nlohmann::ordered_json extra;
  extra["step"] = state.step;
  extra["epoch"] = state.epoch;
  extra["lr"] = state.lr;
  extra["best_val_mdice"] = state.best_val_mdice;
  extra["best_epoch"] = state.best_epoch;
  extra["adam_step"] = state.adam.step;
  extra["train_config"] = cfg.to_json();
  auto& hist = extra["history"] = nlohmann::ordered_json::array();
  for (const auto& r : state.history) hist.push_back(r.to_json());
  a.extra = extra;
  write_archive(path, a);
}

TrainState load_checkpoint(const std::string& path, Model<float>& model) {
  const WeightArchive a = read_archive(path);
  load_into(model.params(), a, true);
  TrainState s;
  try {
    const auto& x = a.extra;
    s.step = x.at("step").get<int64_t>();
    s.epoch = x.at("epoch").get<int64_t>();
    s.lr = x.at("lr").get<double>();
    s.best_val_mdice = x.at("best_val_mdice").get<double>();
    s.best_epoch = x.at("best_epoch").get<int64_t>();
    s.adam.step = x.at("adam_step").get<int64_t>();
    for (const auto& r : x.at("history")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<int64_t>();
      e.steps = r.at("steps").get<int64_t>();
      e.lr = r.at("lr").get<double>();
      auto num = [&](const char* k) {
        return r.at(k).is_null() ? std::nan("") : r.at(k).get<double>();
      };
      e.train_loss = num("train_loss");
      e.val_mdice = num("val_mdice");
      e.val_miou = num("val_miou");
      e.wall_s = r.at("wall_s").get<double>();
      s.history.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw WeightFileError(WeightErrorKind::kCorrupt, path + ": not a training checkpoint: " + e.what());
  }
  for (const auto& e : a.entries) {
    if (e.kind == "adam_m") s.adam.m[e.name.substr(8)] = e.value;
    else if (e.kind == "adam_v") s.adam.v[e.name.substr(8)] = e.value;
  }
  return s;
}

}  // namespace lwanet
