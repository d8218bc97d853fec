// lwanet: train, infer, bench, analyze and grad-check from one binary.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lwanet/analysis.hpp"
#include "lwanet/data.hpp"
#include "lwanet/grad_suite.hpp"
#include "lwanet/kernels.hpp"
#include "lwanet/network.hpp"
#include "lwanet/run_config.hpp"
#include "lwanet/training.hpp"
#include "lwanet/weights_io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace lwanet;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::optional<int> workers;
  bool json = false;
};

struct Size {
  int64_t width = 0;
  int64_t height = 0;
};

Size parse_size(const std::string& text) {
  static const std::regex re(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw UsageError("size must look like WIDTHxHEIGHT, got '" + text + "'");
  Size s{std::stoll(m[1]), std::stoll(m[2])};
  if (s.width <= 0 || s.height <= 0) throw UsageError("size must be positive: " + text);
  return s;
}

void require_div32(const Size& s) {
  if (s.width % 32 != 0 || s.height % 32 != 0) {
    throw UsageError("size " + std::to_string(s.width) + "x" + std::to_string(s.height) +
                     " is not divisible by 32");
  }
}

void set_workers(const Globals& g, int fallback) {
  const int w = g.workers.value_or(fallback);
  if (w < 1) throw UsageError("--workers must be >= 1");
  kernels::set_num_workers(w);
}

NetworkConfig config_from_weights(const std::string& path) {
  const WeightArchive a = read_archive(path);
  try {
    return NetworkConfig::from_json(a.config);
  } catch (const std::invalid_argument& e) {
    throw WeightFileError(WeightErrorKind::kCorrupt, path + ": bad embedded config: " + e.what());
  }
}

void emit(const Globals& g, const ordered_json& j, const std::string& table) {
  if (g.json) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "config: " << j.at("config").dump() << '\n' << table;
  }
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<int64_t> synthetic;
  std::optional<int64_t> epochs;
  std::optional<int64_t> steps;
  std::optional<double> lr;
  std::optional<int64_t> batch_size;
  std::string out;
  std::string resume;
  std::string pretrained;
  std::string data;
  bool no_afb = false;
};

void split_train_val(std::vector<SegSample> all, double fraction, std::vector<SegSample>& train_set,
                     std::vector<SegSample>& val) {
  for (auto& s : all) (in_validation_split(s.name, fraction) ? val : train_set).push_back(std::move(s));
  if (train_set.empty()) {
    train_set = std::move(val);
    val.clear();
  }
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig rc;
  if (!a.config.empty()) rc = RunConfig::load(a.config);
  if (a.synthetic) rc.data.synthetic = *a.synthetic;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.steps) rc.train.max_steps = *a.steps;
  if (a.lr) rc.train.lr = *a.lr;
  if (a.batch_size) rc.train.batch_size = *a.batch_size;
  if (!a.out.empty()) rc.train.out_dir = a.out;
  if (!a.pretrained.empty()) rc.train.pretrained_encoder = a.pretrained;
  if (!a.data.empty()) rc.data.root = a.data;
  if (a.no_afb) rc.network.afb_enabled = false;
  if (g.workers) rc.workers = *g.workers;
  if (rc.train.out_dir.empty()) rc.train.out_dir = "lwanet_run";
  apply_env_overrides(rc);
  rc.train.augmentation = rc.augment;
  rc.validate();
  if (rc.data.synthetic == 0 && rc.data.root.empty()) {
    throw UsageError("no training data: give --data, --synthetic or data.root in the config");
  }
  set_workers(g, rc.workers);

  const NetworkConfig& nc = rc.network;
  std::vector<SegSample> train_set, val;
  std::vector<ClassInfo> classes;
  if (rc.data.synthetic > 0) {
    const int64_t k = rc.data.synthetic_classes > 0 ? rc.data.synthetic_classes : nc.num_classes;
    if (k > nc.num_classes) throw ConfigError("data.synthetic_classes exceeds network.num_classes");
    split_train_val(synth_shapes(rc.data.synthetic, nc.height, nc.width, k, rc.data.synthetic_seed),
                    rc.train.val_fraction, train_set, val);
    classes = default_classes(nc.num_classes);
  } else {
    std::vector<SegSample> all = load_dataset(rc.data.root, rc.data.train_split, nc.num_classes);
    if (rc.data.val_split.empty()) {
      split_train_val(std::move(all), rc.train.val_fraction, train_set, val);
    } else {
      train_set = std::move(all);
      val = load_dataset(rc.data.root, rc.data.val_split, nc.num_classes);
    }
    const fs::path cj = fs::path(rc.data.root) / "classes.json";
    classes = fs::exists(cj) ? read_classes(cj.string()) : default_classes(nc.num_classes);
  }

  Model<float> model(nc, rc.train.seed);
  TrainState state;
  if (!a.resume.empty()) state = load_checkpoint(a.resume, model);

  const fs::path out(rc.train.out_dir);
  fs::create_directories(out);
  std::ofstream(out / "config.json") << rc.to_json().dump(2) << '\n';
  write_classes((out / "classes.json").string(), classes);

  if (!g.json) {
    std::cout << "config: " << rc.to_json().dump() << '\n';
    std::cout << "train samples " << train_set.size() << ", validation samples " << val.size()
              << (val.empty() ? " (metrics on the training set)" : "") << '\n';
  }
  TrainHooks hooks;
  if (!g.json) {
    hooks.on_epoch = [](const EpochRecord& r) {
      std::printf("epoch %4lld  steps %6lld  lr %.3g  loss %.6f  mdice %.4f  miou %.4f  %.1fs\n",
                  static_cast<long long>(r.epoch), static_cast<long long>(r.steps), r.lr, r.train_loss,
                  r.val_mdice, r.val_miou, r.wall_s);
      std::fflush(stdout);
    };
  }
  const TrainResult res = train(model, train_set, val, rc.train, state, hooks);

  ordered_json j;
  j["config"] = rc.to_json();
  j["steps"] = res.state.step;
  j["epochs"] = res.state.epoch;
  j["best_val_mdice"] = res.state.best_val_mdice;
  j["best_epoch"] = res.state.best_epoch;
  j["model"] = (out / "model.lwaw").string();
  if (g.json) {
    auto& h = j["history"] = ordered_json::array();
    for (const auto& r : res.state.history) h.push_back(r.to_json());
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "wrote " << (out / "model.lwaw").string() << '\n';
  }
  return kOk;
}

// --- infer ---------------------------------------------------------------

struct InferArgs {
  std::string weights;
  std::vector<std::string> inputs;
  std::string out = ".";
  std::string classes;
  bool resize = false;
};

int cmd_infer(const Globals& g, const InferArgs& a) {
  set_workers(g, 1);
  const NetworkConfig nc = config_from_weights(a.weights);
  Model<float> model(nc, 0);
  load_weights(a.weights, model, true);

  std::vector<ClassInfo> classes;
  const fs::path sibling = fs::path(a.weights).parent_path() / "classes.json";
  if (!a.classes.empty()) {
    classes = read_classes(a.classes);
  } else if (fs::exists(sibling)) {
    classes = read_classes(sibling.string());
  } else {
    classes = default_classes(nc.num_classes);
  }
  if (static_cast<int64_t>(classes.size()) < nc.num_classes) {
    throw DatasetError("classes file lists " + std::to_string(classes.size()) + " classes, model has " +
                       std::to_string(nc.num_classes));
  }

  fs::create_directories(a.out);
  ordered_json j;
  j["config"] = nc.to_json();
  auto& results = j["results"] = ordered_json::array();
  int failures = 0;
  for (const auto& path : a.inputs) {
    ordered_json r;
    r["input"] = path;
    try {
      Tensor<float> image = read_image(path);
      const Shape& s = image.shape();
      if (s.h % 32 != 0 || s.w % 32 != 0) {
        if (!a.resize) {
          throw std::runtime_error(std::to_string(s.w) + "x" + std::to_string(s.h) +
                                   " is not divisible by 32 (use --resize)");
        }
        image = resize_image(image, nc.height, nc.width);
      }
      const Tensor<float> logits = model.logits(normalize_image(image, nc.norm_mean, nc.norm_std));
      LabelMap mask(1, image.shape().h, image.shape().w);
      mask.data = predict_classes(logits, image.shape().h / logits.shape().h);
      const std::string stem = fs::path(path).stem().string();
      const fs::path mask_path = fs::path(a.out) / (stem + "_mask.png");
      const fs::path overlay_path = fs::path(a.out) / (stem + "_overlay.png");
      write_mask(mask_path.string(), mask);
      write_overlay(overlay_path.string(), image, mask, classes);
      r["mask"] = mask_path.string();
      r["overlay"] = overlay_path.string();
      r["size"] = {image.shape().w, image.shape().h};
      if (!g.json) std::cout << path << " -> " << mask_path.string() << ", " << overlay_path.string() << '\n';
    } catch (const std::exception& e) {
      ++failures;
      r["error"] = e.what();
      std::cerr << "error: " << path << ": " << e.what() << '\n';
    }
    results.push_back(r);
  }
  if (g.json) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "config: " << j["config"].dump() << '\n';
  }
  return failures == 0 ? kOk : kRuntime;
}

// --- bench / analyze -----------------------------------------------------

NetworkConfig model_config(const std::string& config, const std::string& weights) {
  if (!config.empty() && !weights.empty()) throw UsageError("--config and --weights are exclusive");
  if (!weights.empty()) return config_from_weights(weights);
  if (!config.empty()) return RunConfig::load(config).network;
  return {};
}

struct BenchArgs {
  std::string size = "960x544";
  int iters = 20;
  int warmup = 2;
  std::string weights;
  std::string config;
  uint64_t seed = 0;
};

int cmd_bench(const Globals& g, const BenchArgs& a) {
  const Size size = parse_size(a.size);
  require_div32(size);
  if (a.iters < 1 || a.warmup < 0) throw UsageError("--iters must be >= 1 and --warmup >= 0");
  set_workers(g, 1);
  NetworkConfig nc = model_config(a.config, a.weights);
  nc.height = size.height;
  nc.width = size.width;
  Model<float> model(nc, a.seed);
  if (!a.weights.empty()) load_weights(a.weights, model, true);
  const LatencyStats st = benchmark_latency(model, Shape{1, 3, size.height, size.width}, a.warmup, a.iters, a.seed);
  ordered_json j;
  j["config"] = nc.to_json();
  j["weights"] = a.weights.empty() ? ordered_json(nullptr) : ordered_json(a.weights);
  j["latency"] = st.to_json();
  emit(g, j, st.to_table());
  return kOk;
}

struct AnalyzeArgs {
  std::string size = "960x544";
  std::string config;
  std::string weights;
  int flops_per_mac = 1;
  bool no_afb = false;
  bool no_final_conv = false;
  bool no_layers = false;
};

int cmd_analyze(const Globals& g, const AnalyzeArgs& a) {
  const Size size = parse_size(a.size);
  require_div32(size);
  if (a.flops_per_mac != 1 && a.flops_per_mac != 2) throw UsageError("--flops-per-mac must be 1 or 2");
  NetworkConfig nc = model_config(a.config, a.weights);
  if (a.no_afb) nc.afb_enabled = false;
  if (a.no_final_conv) nc.keep_final_encoder_conv = false;
  nc.height = size.height;
  nc.width = size.width;
  try {
    nc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const CostReport rep = count_model(nc, Shape{1, 3, size.height, size.width});
  ordered_json j;
  j["config"] = nc.to_json();
  j["cost"] = rep.to_json(a.flops_per_mac, !a.no_layers);
  emit(g, j, rep.to_table(a.flops_per_mac, !a.no_layers));
  return kOk;
}

// --- grad-check ----------------------------------------------------------

struct GradArgs {
  int cases = 20;
  uint64_t seed = 1;
  std::string only;
  double threshold = 1e-4;
};

int cmd_grad_check(const Globals& g, const GradArgs& a) {
  if (a.cases < 1) throw UsageError("--cases must be >= 1");
  set_workers(g, 1);
  const auto entries = run_grad_suite(a.cases, a.seed, a.only);
  if (entries.empty()) throw UsageError("no op matches --only '" + a.only + "'");
  ordered_json j = grad_suite_json(entries, a.threshold);
  if (g.json) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("%-24s %6s %14s %10s %8s\n", "op", "cases", "max_rel_error", "resamples", "seconds");
    for (const auto& e : entries) {
      std::printf("%-24s %6d %14.3e %10d %8.2f  %s\n", e.name.c_str(), e.cases, e.max_rel_error, e.resamples,
                  e.seconds, e.max_rel_error < a.threshold ? "ok" : "FAIL");
    }
    std::printf("threshold %.1e: %s\n", a.threshold, j["pass"].get<bool>() ? "pass" : "FAIL");
  }
  return j["pass"].get<bool>() ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-guided lightweight segmentation network"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--workers", g.workers, "Worker threads (results do not depend on it)");
  app.add_flag("--json", g.json, "Print JSON instead of tables");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", ta.config, "JSON run configuration");
  train_cmd->add_option("--synthetic", ta.synthetic, "Train on this many generated samples");
  train_cmd->add_option("--data", ta.data, "Dataset root");
  train_cmd->add_option("--epochs", ta.epochs);
  train_cmd->add_option("--steps", ta.steps, "Stop after this many optimizer steps");
  train_cmd->add_option("--lr", ta.lr);
  train_cmd->add_option("--batch-size", ta.batch_size);
  train_cmd->add_option("--out", ta.out, "Output directory");
  train_cmd->add_option("--resume", ta.resume, "Checkpoint to continue from");
  train_cmd->add_option("--pretrained", ta.pretrained, "LWAW file with encoder weights");
  train_cmd->add_flag("--no-afb", ta.no_afb, "Plain additive fusion in the decoder");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Segment images");
  infer_cmd->add_option("--weights", ia.weights)->required();
  infer_cmd->add_option("--input", ia.inputs, "Input PNG (repeatable)")->required();
  infer_cmd->add_option("--out", ia.out, "Output directory");
  infer_cmd->add_option("--classes", ia.classes, "classes.json with display colors");
  infer_cmd->add_flag("--resize", ia.resize, "Resize inputs to the model size when not divisible by 32");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Measure forward latency");
  bench_cmd->add_option("--size", ba.size, "WIDTHxHEIGHT")->capture_default_str();
  bench_cmd->add_option("--iters", ba.iters)->capture_default_str();
  bench_cmd->add_option("--warmup", ba.warmup)->capture_default_str();
  bench_cmd->add_option("--weights", ba.weights);
  bench_cmd->add_option("--config", ba.config);
  bench_cmd->add_option("--seed", ba.seed);

  AnalyzeArgs aa;
  auto* analyze_cmd = app.add_subcommand("analyze", "Static MAC and parameter counts");
  analyze_cmd->add_option("--size", aa.size, "WIDTHxHEIGHT")->capture_default_str();
  analyze_cmd->add_option("--config", aa.config);
  analyze_cmd->add_option("--weights", aa.weights);
  analyze_cmd->add_option("--flops-per-mac", aa.flops_per_mac)->capture_default_str();
  analyze_cmd->add_flag("--no-afb", aa.no_afb);
  analyze_cmd->add_flag("--no-final-conv", aa.no_final_conv, "Drop the 1x1 conv to 1280 channels");
  analyze_cmd->add_flag("--no-layers", aa.no_layers, "Stage totals only");

  GradArgs ga;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of every op and block");
  grad_cmd->add_option("--cases", ga.cases, "Random cases per op")->capture_default_str();
  grad_cmd->add_option("--seed", ga.seed)->capture_default_str();
  grad_cmd->add_option("--only", ga.only, "Run ops whose name contains this");
  grad_cmd->add_option("--threshold", ga.threshold)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(g, ta);
    if (*infer_cmd) return cmd_infer(g, ia);
    if (*bench_cmd) return cmd_bench(g, ba);
    if (*analyze_cmd) return cmd_analyze(g, aa);
    if (*grad_cmd) return cmd_grad_check(g, ga);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
