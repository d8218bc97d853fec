#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwanet/loss_metrics.hpp"
#include "lwanet/tensor.hpp"

namespace lwanet {

/// One image with its class-index mask. The image is [1, 3, h, w] RGB in
/// [0, 1]; the mask is [1, h, w].
struct SegSample {
  std::string name;
  Tensor<float> image;
  LabelMap mask;
};

/// Diagnostics from dataset loading; the message names the offending file.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClassInfo {
  std::string name;
  std::array<uint8_t, 3> color{0, 0, 0};  // RGB
};

/// `classes.json`: {"classes": [{"name": ..., "color": [r, g, b]}, ...]}
std::vector<ClassInfo> read_classes(const std::string& path);
void write_classes(const std::string& path, const std::vector<ClassInfo>& classes);
/// Background black, then well-separated display colors.
std::vector<ClassInfo> default_classes(int64_t num_classes);

/// Reads `<root>/<split>/images/*.png` paired by stem with
/// `<root>/<split>/masks/*.png`, in lexicographic order. Masks hold class ids
/// as 8-bit gray values; color masks are mapped through the class colors of
/// `<root>/classes.json`. `num_classes` < 1 takes the count from that file.
std::vector<SegSample> load_dataset(const std::string& root, const std::string& split,
                                    int64_t num_classes = 0);

/// Writes samples in the layout `load_dataset` reads, plus classes.json.
void write_dataset(const std::string& root, const std::string& split,
                   const std::vector<SegSample>& samples, const std::vector<ClassInfo>& classes);

Tensor<float> read_image(const std::string& path);
void write_image(const std::string& path, const Tensor<float>& image);
void write_mask(const std::string& path, const LabelMap& mask, int64_t index = 0);
/// Image blended with class colors; background pixels keep the image.
void write_overlay(const std::string& path, const Tensor<float>& image, const LabelMap& mask,
                   const std::vector<ClassInfo>& classes, double alpha = 0.5);
/// Bilinear resize of a [1, 3, h, w] image.
Tensor<float> resize_image(const Tensor<float>& image, int64_t height, int64_t width);

struct AugmentConfig {
  double rotation_deg = 15.0;
  double shift_fraction = 0.1;
  double flip_probability = 0.5;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static AugmentConfig from_json(const nlohmann::json& j);
};

/// Concrete transform: horizontal flip, then rotation about the image
/// center, then translation (pixels).
struct AffineParams {
  double angle_deg = 0.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
  bool flip = false;

  bool identity() const { return angle_deg == 0.0 && shift_x == 0.0 && shift_y == 0.0 && !flip; }
};

AffineParams sample_affine(const AugmentConfig& cfg, int64_t height, int64_t width, std::mt19937_64& rng);
/// Image bilinear, mask nearest; out-of-bounds pixels become black / class 0.
SegSample apply_affine(const SegSample& s, const AffineParams& p);
SegSample augment(const SegSample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

/// Per-sample generator for deterministic parallel augmentation.
std::mt19937_64 sample_rng(uint64_t seed, int64_t epoch, int64_t index);

struct SynthOptions {
  bool highlights = true;
  bool shadows = true;
  // Thinnest half-width of any shape in pixels; 6 keeps every shape at
  // least three cells wide on the network's stride-4 output grid.
  double min_half_width = 6.0;
};

/// Procedural instrument-like shapes (bars, wedges, ellipses; class k uses
/// shape kind (k - 1) mod 3) on textured backgrounds.
std::vector<SegSample> synth_shapes(int64_t count, int64_t height, int64_t width, int64_t num_classes,
                                    uint64_t seed, const SynthOptions& opts = {});

struct SegBatch {
  Tensor<float> images;  // normalized, [n, 3, h, w]
  LabelMap masks;
  std::vector<int64_t> indices;
};

/// Partition of [0, count) into batches; the final short batch is kept.
/// Shuffled with `seed` when given.
std::vector<std::vector<int64_t>> batch_indices(int64_t count, int64_t batch_size,
                                                std::optional<uint64_t> seed);

SegBatch make_batch(const std::vector<SegSample>& samples, const std::vector<int64_t>& indices,
                    const std::array<double, 3>& mean, const std::array<double, 3>& stddev);

/// Normalizes a single [1, 3, h, w] image.
Tensor<float> normalize_image(const Tensor<float>& image, const std::array<double, 3>& mean,
                              const std::array<double, 3>& stddev);

/// Deterministic hold-out by FNV-1a hash of the sample name.
bool in_validation_split(const std::string& name, double fraction);

}  // namespace lwanet
