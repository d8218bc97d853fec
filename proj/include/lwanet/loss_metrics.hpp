#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwanet/autodiff.hpp"

namespace lwanet {

/// Integer class-index grid, [n, h, w] row-major.
struct LabelMap {
  int64_t n = 0;
  int64_t h = 0;
  int64_t w = 0;
  std::vector<int32_t> data;

  LabelMap() = default;
  LabelMap(int64_t n_, int64_t h_, int64_t w_, int32_t fill = 0)
      : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  int64_t size() const { return n * h * w; }
  int32_t& at(int64_t b, int64_t y, int64_t x) { return data[static_cast<std::size_t>((b * h + y) * w + x)]; }
  int32_t at(int64_t b, int64_t y, int64_t x) const {
    return data[static_cast<std::size_t>((b * h + y) * w + x)];
  }
};

struct FocalConfig {
  double gamma = 6.0;
  std::optional<int32_t> ignore_index;
  double p_floor = 1e-12;

  void validate() const;
};

/// Mean over valid pixels of -(1 - p_t)^gamma * log(p_t), where p_t is the
/// softmax probability of the target class. Logits and target must agree on
/// n, h and w.
template <typename T>
Var<T> focal_loss(const Var<T>& logits, const LabelMap& target, const FocalConfig& cfg);

/// Per-pixel focal term for a given true-class probability.
double focal_term(double p_t, double gamma);

/// Running per-class true-positive / false-positive / false-negative counts.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int64_t num_classes);

  void update(std::span<const int32_t> pred, std::span<const int32_t> target,
              std::optional<int32_t> ignore_index = std::nullopt);
  void update(const LabelMap& pred, const LabelMap& target,
              std::optional<int32_t> ignore_index = std::nullopt);
  void merge(const ConfusionAccumulator& other);

  int64_t num_classes() const { return static_cast<int64_t>(tp_.size()); }
  int64_t tp(int64_t c) const { return tp_[static_cast<std::size_t>(c)]; }
  int64_t fp(int64_t c) const { return fp_[static_cast<std::size_t>(c)]; }
  int64_t fn(int64_t c) const { return fn_[static_cast<std::size_t>(c)]; }
  int64_t pixels() const { return pixels_; }
  /// A class is present if it occurs in the prediction or the target.
  bool present(int64_t c) const { return tp(c) + fp(c) + fn(c) > 0; }

 private:
  std::vector<int64_t> tp_, fp_, fn_;
  int64_t pixels_ = 0;
};

struct MetricOptions {
  bool present_only = true;
  bool include_background = false;  // class 0
};

/// Classes with an empty denominator score 0 here.
std::vector<double> dice_per_class(const ConfusionAccumulator& acc);
std::vector<double> iou_per_class(const ConfusionAccumulator& acc);
/// NaN when no class qualifies under the options.
double mean_dice(const ConfusionAccumulator& acc, const MetricOptions& opts = {});
double mean_iou(const ConfusionAccumulator& acc, const MetricOptions& opts = {});

nlohmann::ordered_json metrics_report(const ConfusionAccumulator& acc, const MetricOptions& opts = {},
                                      const std::vector<std::string>& class_names = {});

}  // namespace lwanet
