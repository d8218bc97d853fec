#include "lwanet/loss_metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lwanet {

void FocalConfig::validate() const {
  if (!(gamma >= 0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("focal loss: gamma must be finite and >= 0");
  }
  if (!(p_floor > 0 && p_floor < 1)) throw std::invalid_argument("focal loss: p_floor must be in (0,1)");
}

double focal_term(double p_t, double gamma) {
  return -std::pow(1.0 - p_t, gamma) * std::log(p_t);
}

namespace {

// Per-pixel log-softmax statistics of the target class, plus the
// coefficient c with d(loss_i)/dz_j = c * (delta_tj - p_j).
struct PixelTerm {
  double loss;
  double coeff;
};

PixelTerm pixel_term(double log_p, double gamma, double log_floor) {
  const bool floored = log_p < log_floor;
  const double lp = floored ? log_floor : log_p;
  const double p = std::exp(log_p);
  const double one_minus = -std::expm1(log_p);
  const double mod = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
  PixelTerm t{-mod * lp, 0.0};
  // d/dp of -(1-p)^g log p is g(1-p)^(g-1) log p - (1-p)^g / p; times p for dz.
  double first = 0.0;
  if (gamma != 0.0 && one_minus > 0.0) first = gamma * std::pow(one_minus, gamma - 1.0) * p * lp;
  t.coeff = floored ? first : first - mod;
  return t;
}

}  // namespace

template <typename T>
Var<T> focal_loss(const Var<T>& logits, const LabelMap& target, const FocalConfig& cfg) {
  cfg.validate();
  const Shape s = logits.shape();
  if (s.n != target.n || s.h != target.h || s.w != target.w ||
      static_cast<int64_t>(target.data.size()) != target.size()) {
    throw ShapeError("focal_loss: logits " + s.str() + " vs target [" + std::to_string(target.n) + "," +
                     std::to_string(target.h) + "," + std::to_string(target.w) + "]");
  }
  const int64_t plane = s.h * s.w;
  const int64_t classes = s.c;
  const double log_floor = std::log(cfg.p_floor);
  const T* z = logits.value().data().data();

  auto coeffs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s.n * plane), 0.0);
  int64_t valid = 0;
  double total = 0.0;
  std::vector<double> row(static_cast<std::size_t>(classes));
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t i = 0; i < plane; ++i) {
      const int32_t t = target.data[static_cast<std::size_t>(n * plane + i)];
      if (cfg.ignore_index && t == *cfg.ignore_index) continue;
      if (t < 0 || t >= classes) {
        throw std::invalid_argument("focal_loss: class id " + std::to_string(t) + " out of range [0," +
                                    std::to_string(classes) + ")");
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < classes; ++c) {
        row[c] = static_cast<double>(z[(n * classes + c) * plane + i]);
        mx = std::max(mx, row[c]);
      }
      double acc = 0.0;
      for (int64_t c = 0; c < classes; ++c) acc += std::exp(row[c] - mx);
      const double lse = mx + std::log(acc);
      const PixelTerm term = pixel_term(row[t] - lse, cfg.gamma, log_floor);
      total += term.loss;
      (*coeffs)[static_cast<std::size_t>(n * plane + i)] = term.coeff;
      ++valid;
    }
  }
  const double inv = valid > 0 ? 1.0 / static_cast<double>(valid) : 0.0;
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(total * inv));

  Tape<T>* tape = common_tape<T>({&logits});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record(
      "focal_loss", std::move(out), {logits},
      [xs = logits.shared(), target, cfg, coeffs, inv](const Tensor<T>& g, const std::vector<bool>& needs) {
        std::vector<Tensor<T>> r(1);
        if (!needs[0]) return r;
        const Shape s = xs->shape();
        const int64_t plane = s.h * s.w;
        const double scale = static_cast<double>(g[0]) * inv;
        r[0] = Tensor<T>(s);
        const T* z = xs->data().data();
        T* dz = r[0].data().data();
        std::vector<double> p(static_cast<std::size_t>(s.c));
        for (int64_t n = 0; n < s.n; ++n) {
          for (int64_t i = 0; i < plane; ++i) {
            const int32_t t = target.data[static_cast<std::size_t>(n * plane + i)];
            if (cfg.ignore_index && t == *cfg.ignore_index) continue;
            const double coeff = (*coeffs)[static_cast<std::size_t>(n * plane + i)] * scale;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t c = 0; c < s.c; ++c) mx = std::max(mx, static_cast<double>(z[(n * s.c + c) * plane + i]));
            double acc = 0.0;
            for (int64_t c = 0; c < s.c; ++c) {
              p[c] = std::exp(static_cast<double>(z[(n * s.c + c) * plane + i]) - mx);
              acc += p[c];
            }
            for (int64_t c = 0; c < s.c; ++c) {
              const double delta = c == t ? 1.0 : 0.0;
              dz[(n * s.c + c) * plane + i] = static_cast<T>(coeff * (delta - p[c] / acc));
            }
          }
        }
        return r;
      });
}

template Var<float> focal_loss(const Var<float>&, const LabelMap&, const FocalConfig&);
template Var<double> focal_loss(const Var<double>&, const LabelMap&, const FocalConfig&);

// --- confusion counts ----------------------------------------------------------

ConfusionAccumulator::ConfusionAccumulator(int64_t num_classes) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionAccumulator: num_classes must be positive");
  tp_.assign(static_cast<std::size_t>(num_classes), 0);
  fp_ = fn_ = tp_;
}

void ConfusionAccumulator::update(std::span<const int32_t> pred, std::span<const int32_t> target,
                                  std::optional<int32_t> ignore_index) {
  if (pred.size() != target.size()) {
    throw ShapeError("update_confusion: prediction has " + std::to_string(pred.size()) +
                     " pixels, target has " + std::to_string(target.size()));
  }
  const int32_t k = static_cast<int32_t>(num_classes());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int32_t t = target[i];
    const int32_t p = pred[i];
    if (ignore_index && t == *ignore_index) continue;
    if (t < 0 || t >= k || p < 0 || p >= k) {
      throw std::invalid_argument("update_confusion: class id out of range at pixel " + std::to_string(i));
    }
    ++pixels_;
    if (p == t) {
      ++tp_[t];
    } else {
      ++fp_[p];
      ++fn_[t];
    }
  }
}

void ConfusionAccumulator::update(const LabelMap& pred, const LabelMap& target,
                                  std::optional<int32_t> ignore_index) {
  if (pred.n != target.n || pred.h != target.h || pred.w != target.w) {
    throw ShapeError("update_confusion: prediction [" + std::to_string(pred.n) + "," +
                     std::to_string(pred.h) + "," + std::to_string(pred.w) + "] vs target [" +
                     std::to_string(target.n) + "," + std::to_string(target.h) + "," +
                     std::to_string(target.w) + "]");
  }
  update(std::span<const int32_t>(pred.data), std::span<const int32_t>(target.data), ignore_index);
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.num_classes() != num_classes()) {
    throw std::invalid_argument("ConfusionAccumulator::merge: class counts differ");
  }
  for (std::size_t c = 0; c < tp_.size(); ++c) {
    tp_[c] += other.tp_[c];
    fp_[c] += other.fp_[c];
    fn_[c] += other.fn_[c];
  }
  pixels_ += other.pixels_;
}

// --- Dice / IOU -----------------------------------------------------------------

namespace {

void require_populated(const ConfusionAccumulator& acc) {
  if (acc.pixels() == 0) throw std::invalid_argument("metrics: accumulator is empty");
}

template <typename Score>
double mean_over(const ConfusionAccumulator& acc, const MetricOptions& opts, Score score) {
  require_populated(acc);
  double total = 0.0;
  int64_t count = 0;
  for (int64_t c = opts.include_background ? 0 : 1; c < acc.num_classes(); ++c) {
    if (opts.present_only && !acc.present(c)) continue;
    total += score(c);
    ++count;
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(count);
}

double dice_of(const ConfusionAccumulator& acc, int64_t c) {
  const int64_t den = 2 * acc.tp(c) + acc.fp(c) + acc.fn(c);
  return den == 0 ? 0.0 : 2.0 * static_cast<double>(acc.tp(c)) / static_cast<double>(den);
}

double iou_of(const ConfusionAccumulator& acc, int64_t c) {
  const int64_t den = acc.tp(c) + acc.fp(c) + acc.fn(c);
  return den == 0 ? 0.0 : static_cast<double>(acc.tp(c)) / static_cast<double>(den);
}

}  // namespace

std::vector<double> dice_per_class(const ConfusionAccumulator& acc) {
  require_populated(acc);
  std::vector<double> out;
  for (int64_t c = 0; c < acc.num_classes(); ++c) out.push_back(dice_of(acc, c));
  return out;
}

std::vector<double> iou_per_class(const ConfusionAccumulator& acc) {
  require_populated(acc);
  std::vector<double> out;
  for (int64_t c = 0; c < acc.num_classes(); ++c) out.push_back(iou_of(acc, c));
  return out;
}

double mean_dice(const ConfusionAccumulator& acc, const MetricOptions& opts) {
  return mean_over(acc, opts, [&](int64_t c) { return dice_of(acc, c); });
}

double mean_iou(const ConfusionAccumulator& acc, const MetricOptions& opts) {
  return mean_over(acc, opts, [&](int64_t c) { return iou_of(acc, c); });
}

nlohmann::ordered_json metrics_report(const ConfusionAccumulator& acc, const MetricOptions& opts,
                                      const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (int64_t c = 0; c < acc.num_classes(); ++c) {
    nlohmann::ordered_json row;
    row["id"] = c;
    if (static_cast<std::size_t>(c) < class_names.size()) row["name"] = class_names[c];
    row["present"] = acc.present(c);
    row["dice"] = dice_of(acc, c);
    row["iou"] = iou_of(acc, c);
    row["tp"] = acc.tp(c);
    row["fp"] = acc.fp(c);
    row["fn"] = acc.fn(c);
    classes.push_back(row);
  }
  const double md = mean_dice(acc, opts);
  const double mi = mean_iou(acc, opts);
  j["mean_dice"] = std::isnan(md) ? nlohmann::ordered_json() : nlohmann::ordered_json(md);
  j["mean_iou"] = std::isnan(mi) ? nlohmann::ordered_json() : nlohmann::ordered_json(mi);
  j["pixels"] = acc.pixels();
  j["present_only"] = opts.present_only;
  j["include_background"] = opts.include_background;
  return j;
}

}  // namespace lwanet
