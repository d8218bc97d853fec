#include "lwanet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace lwanet {

// --- class list -------------------------------------------------------------------

std::vector<ClassInfo> read_classes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DatasetError(path + ": cannot open class list");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(path + ": invalid JSON: " + e.what());
  }
  std::vector<ClassInfo> out;
  try {
    for (const auto& c : j.at("classes")) {
      ClassInfo info;
      info.name = c.at("name").get<std::string>();
      if (c.contains("color")) info.color = c.at("color").get<std::array<uint8_t, 3>>();
      out.push_back(info);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(path + ": malformed class list: " + e.what());
  }
  if (out.empty()) throw DatasetError(path + ": class list is empty");
  return out;
}

void write_classes(const std::string& path, const std::vector<ClassInfo>& classes) {
  nlohmann::ordered_json j;
  auto& list = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : classes) list.push_back({{"name", c.name}, {"color", c.color}});
  std::ofstream f(path);
  if (!f) throw DatasetError(path + ": cannot write class list");
  f << j.dump(2) << '\n';
}

std::vector<ClassInfo> default_classes(int64_t num_classes) {
  static const std::array<uint8_t, 3> palette[] = {
      {0, 0, 0},       {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
      {145, 30, 180},  {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {250, 190, 212}, {0, 128, 128},
  };
  std::vector<ClassInfo> out;
  for (int64_t k = 0; k < num_classes; ++k) {
    ClassInfo c;
    c.name = k == 0 ? "background" : "class" + std::to_string(k);
    if (k < 12) {
      c.color = palette[k];
    } else {
      c.color = {static_cast<uint8_t>(37 * k % 256), static_cast<uint8_t>(91 * k % 256),
                 static_cast<uint8_t>(173 * k % 256)};
    }
    out.push_back(c);
  }
  return out;
}

// --- PNG io -------------------------------------------------------------------------

Tensor<float> read_image(const std::string& path) {
  const cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw DatasetError(path + ": cannot read image");
  const int64_t h = m.rows, w = m.cols;
  Tensor<float> t(Shape{1, 3, h, w});
  for (int64_t y = 0; y < h; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = static_cast<float>(row[x][2 - c]) / 255.0f;
    }
  }
  return t;
}

namespace {

uint8_t to_byte(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_png(const std::string& path, const cv::Mat& m) {
  if (!cv::imwrite(path, m)) throw DatasetError(path + ": cannot write PNG");
}

LabelMap read_mask(const std::string& path, const std::vector<ClassInfo>& classes) {
  const cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw DatasetError(path + ": cannot read mask");
  if (m.depth() != CV_8U) throw DatasetError(path + ": mask must be 8-bit");
  LabelMap out(1, m.rows, m.cols);
  if (m.channels() == 1) {
    for (int y = 0; y < m.rows; ++y) {
      const uint8_t* row = m.ptr<uint8_t>(y);
      for (int x = 0; x < m.cols; ++x) out.at(0, y, x) = row[x];
    }
    return out;
  }
  if (m.channels() != 3 && m.channels() != 4) throw DatasetError(path + ": unsupported mask channel count");
  const int ch = m.channels();
  for (int y = 0; y < m.rows; ++y) {
    const uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      const uint8_t b = row[x * ch], g = row[x * ch + 1], r = row[x * ch + 2];
      if (r == g && g == b) {
        out.at(0, y, x) = r;
        continue;
      }
      int32_t id = -1;
      for (std::size_t k = 0; k < classes.size(); ++k) {
        if (classes[k].color == std::array<uint8_t, 3>{r, g, b}) {
          id = static_cast<int32_t>(k);
          break;
        }
      }
      if (id < 0) {
        throw DatasetError(path + ": mask color (" + std::to_string(r) + "," + std::to_string(g) + "," +
                           std::to_string(b) + ") at (" + std::to_string(x) + "," + std::to_string(y) +
                           ") matches no class");
      }
      out.at(0, y, x) = id;
    }
  }
  return out;
}

}  // namespace

void write_image(const std::string& path, const Tensor<float>& image) {
  const Shape s = image.shape();
  cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_8UC3);
  for (int64_t y = 0; y < s.h; ++y) {
    auto* row = m.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < s.w; ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = to_byte(image.at(0, c, y, x));
    }
  }
  write_png(path, m);
}

void write_mask(const std::string& path, const LabelMap& mask, int64_t index) {
  cv::Mat m(static_cast<int>(mask.h), static_cast<int>(mask.w), CV_8UC1);
  for (int64_t y = 0; y < mask.h; ++y) {
    uint8_t* row = m.ptr<uint8_t>(static_cast<int>(y));
    for (int64_t x = 0; x < mask.w; ++x) {
      const int32_t v = mask.at(index, y, x);
      if (v < 0 || v > 255) throw DatasetError(path + ": class id does not fit an 8-bit mask");
      row[x] = static_cast<uint8_t>(v);
    }
  }
  write_png(path, m);
}

void write_overlay(const std::string& path, const Tensor<float>& image, const LabelMap& mask,
                   const std::vector<ClassInfo>& classes, double alpha) {
  const Shape s = image.shape();
  if (s.h != mask.h || s.w != mask.w) {
    throw ShapeError("overlay: image " + s.str() + " vs mask " + std::to_string(mask.h) + "x" +
                     std::to_string(mask.w));
  }
  cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_8UC3);
  const auto a = static_cast<float>(alpha);
  for (int64_t y = 0; y < s.h; ++y) {
    auto* row = m.ptr<cv::Vec3b>(static_cast<int>(y));
    for (int64_t x = 0; x < s.w; ++x) {
      const int32_t k = mask.at(0, y, x);
      for (int c = 0; c < 3; ++c) {
        float v = image.at(0, c, y, x);
        if (k > 0 && static_cast<std::size_t>(k) < classes.size()) {
          v = (1 - a) * v + a * static_cast<float>(classes[k].color[c]) / 255.0f;
        }
        row[x][2 - c] = to_byte(v);
      }
    }
  }
  write_png(path, m);
}

Tensor<float> resize_image(const Tensor<float>& image, int64_t height, int64_t width) {
  const Shape s = image.shape();
  Tensor<float> out(Shape{1, s.c, height, width});
  for (int64_t c = 0; c < s.c; ++c) {
    const cv::Mat src(static_cast<int>(s.h), static_cast<int>(s.w), CV_32FC1,
                      const_cast<float*>(image.plane(0, c)));
    cv::Mat dst(static_cast<int>(height), static_cast<int>(width), CV_32FC1, out.plane(0, c));
    cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
  }
  return out;
}

// --- dataset directory ----------------------------------------------------------

std::vector<SegSample> load_dataset(const std::string& root, const std::string& split, int64_t num_classes) {
  const fs::path base = fs::path(root) / split;
  const fs::path images = base / "images";
  const fs::path masks = base / "masks";
  const fs::path classes_path = fs::path(root) / "classes.json";
  std::vector<ClassInfo> classes;
  if (fs::exists(classes_path)) classes = read_classes(classes_path.string());
  if (num_classes < 1) {
    if (classes.empty()) throw DatasetError(classes_path.string() + ": needed to know the class count");
    num_classes = static_cast<int64_t>(classes.size());
  }
  if (!fs::is_directory(images)) throw DatasetError(images.string() + ": missing image directory");
  if (!fs::is_directory(masks)) throw DatasetError(masks.string() + ": missing mask directory");

  auto pngs = [](const fs::path& dir) {
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
    }
    return out;
  };
  const auto image_files = pngs(images);
  const auto mask_files = pngs(masks);
  if (image_files.empty()) throw DatasetError(images.string() + ": split has no images");
  for (const auto& [stem, p] : mask_files) {
    if (image_files.count(stem) == 0) throw DatasetError(p.string() + ": mask has no matching image");
  }

  std::vector<SegSample> out;
  for (const auto& [stem, p] : image_files) {
    auto m = mask_files.find(stem);
    if (m == mask_files.end()) throw DatasetError(p.string() + ": image has no matching mask");
    SegSample s;
    s.name = stem;
    s.image = read_image(p.string());
    s.mask = read_mask(m->second.string(), classes);
    if (s.mask.h != s.image.shape().h || s.mask.w != s.image.shape().w) {
      throw DatasetError(m->second.string() + ": mask size " + std::to_string(s.mask.w) + "x" +
                         std::to_string(s.mask.h) + " differs from image size " +
                         std::to_string(s.image.shape().w) + "x" + std::to_string(s.image.shape().h));
    }
    for (int32_t v : s.mask.data) {
      if (v >= num_classes) {
        throw DatasetError(m->second.string() + ": class id " + std::to_string(v) + " >= num_classes " +
                           std::to_string(num_classes));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const std::string& root, const std::string& split, const std::vector<SegSample>& samples,
                   const std::vector<ClassInfo>& classes) {
  const fs::path base = fs::path(root) / split;
  fs::create_directories(base / "images");
  fs::create_directories(base / "masks");
  write_classes((fs::path(root) / "classes.json").string(), classes);
  for (const auto& s : samples) {
    write_image((base / "images" / (s.name + ".png")).string(), s.image);
    write_mask((base / "masks" / (s.name + ".png")).string(), s.mask);
  }
}

// --- augmentation -----------------------------------------------------------------

void AugmentConfig::validate() const {
  if (!(rotation_deg >= 0) || !(shift_fraction >= 0)) {
    throw std::invalid_argument("augment: rotation and shift ranges must be non-negative");
  }
  if (!(flip_probability >= 0 && flip_probability <= 1)) {
    throw std::invalid_argument("augment: flip_probability must be in [0,1]");
  }
}

nlohmann::ordered_json AugmentConfig::to_json() const {
  return {{"rotation_deg", rotation_deg},
          {"shift_fraction", shift_fraction},
          {"flip_probability", flip_probability},
          {"seed", seed}};
}

AugmentConfig AugmentConfig::from_json(const nlohmann::json& j) {
  AugmentConfig c;
  if (!j.is_object()) throw std::invalid_argument("augment config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "rotation_deg") c.rotation_deg = v.get<double>();
    else if (key == "shift_fraction") c.shift_fraction = v.get<double>();
    else if (key == "flip_probability") c.flip_probability = v.get<double>();
    else if (key == "seed") c.seed = v.get<uint64_t>();
    else throw std::invalid_argument("unknown key augment." + key);
  }
  return c;
}

AffineParams sample_affine(const AugmentConfig& cfg, int64_t height, int64_t width, std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  AffineParams p;
  p.angle_deg = cfg.rotation_deg * u(rng);
  p.shift_x = cfg.shift_fraction * static_cast<double>(width) * u(rng);
  p.shift_y = cfg.shift_fraction * static_cast<double>(height) * u(rng);
  p.flip = coin(rng) < cfg.flip_probability;
  return p;
}

SegSample apply_affine(const SegSample& s, const AffineParams& p) {
  if (p.identity()) return s;
  const Shape sh = s.image.shape();
  const int64_t h = sh.h, w = sh.w;
  SegSample out;
  out.name = s.name;
  out.image = Tensor<float>(sh);
  out.mask = LabelMap(1, h, w);

  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = (static_cast<double>(w) - 1) / 2, cy = (static_cast<double>(h) - 1) / 2;
  const bool pure_flip = p.angle_deg == 0.0 && p.shift_x == 0.0 && p.shift_y == 0.0;

  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double sx, sy;
      if (pure_flip) {
        sx = static_cast<double>(w - 1 - x);
        sy = static_cast<double>(y);
      } else {
        // invert: translate, then rotate by -theta about the center, then flip
        const double dx = static_cast<double>(x) - p.shift_x - cx;
        const double dy = static_cast<double>(y) - p.shift_y - cy;
        sx = cs * dx + sn * dy + cx;
        sy = -sn * dx + cs * dy + cy;
        if (p.flip) sx = static_cast<double>(w - 1) - sx;
      }

      const auto nx = static_cast<int64_t>(std::lround(sx));
      const auto ny = static_cast<int64_t>(std::lround(sy));
      out.mask.at(0, y, x) = (nx >= 0 && nx < w && ny >= 0 && ny < h) ? s.mask.at(0, ny, nx) : 0;

      const auto x0 = static_cast<int64_t>(std::floor(sx));
      const auto y0 = static_cast<int64_t>(std::floor(sy));
      const auto fx = static_cast<float>(sx - static_cast<double>(x0));
      const auto fy = static_cast<float>(sy - static_cast<double>(y0));
      for (int64_t c = 0; c < sh.c; ++c) {
        auto px = [&](int64_t yy, int64_t xx) {
          return (xx >= 0 && xx < w && yy >= 0 && yy < h) ? s.image.at(0, c, yy, xx) : 0.0f;
        };
        const float a = px(y0, x0), b = px(y0, x0 + 1), cc = px(y0 + 1, x0), d = px(y0 + 1, x0 + 1);
        const float top = a + fx * (b - a);
        const float bot = cc + fx * (d - cc);
        out.image.at(0, c, y, x) = std::clamp(top + fy * (bot - top), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

SegSample augment(const SegSample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  return apply_affine(s, sample_affine(cfg, s.image.shape().h, s.image.shape().w, rng));
}

std::mt19937_64 sample_rng(uint64_t seed, int64_t epoch, int64_t index) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(epoch), static_cast<uint32_t>(index), 0x417567u};
  return std::mt19937_64(seq);
}

// --- synthetic instruments -----------------------------------------------------------

namespace {

std::array<float, 3> class_tint(int64_t k) {
  static const std::array<float, 3> tints[] = {
      {0.86f, 0.86f, 0.90f}, {0.30f, 0.55f, 0.90f}, {0.30f, 0.80f, 0.40f},
      {0.95f, 0.85f, 0.25f}, {0.70f, 0.35f, 0.85f}, {0.25f, 0.85f, 0.85f},
  };
  return tints[(k - 1) % 6];
}

constexpr double kWedgeCut = 0.3;

struct Shape2D {
  int kind;  // 0 bar, 1 wedge, 2 ellipse
  double cx, cy, angle, a, b;
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = std::cos(angle) * dx + std::sin(angle) * dy;
    const double v = -std::sin(angle) * dx + std::cos(angle) * dy;
    switch (kind) {
      case 0: return std::abs(u) <= a && std::abs(v) <= b;
      case 1: {
        // opening along +u with half-angle b, length a, apex cut off
        if (u < kWedgeCut * a || u > a) return false;
        return std::abs(v) <= u * std::tan(b);
      }
      default: return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
  }
  // position along the long axis in [0,1], used for shading
  double along(double x, double y) const {
    const double u = std::cos(angle) * (x - cx) + std::sin(angle) * (y - cy);
    return kind == 1 ? u / a : (u + a) / (2 * a);
  }
};

}  // namespace

std::vector<SegSample> synth_shapes(int64_t count, int64_t height, int64_t width, int64_t num_classes,
                                    uint64_t seed, const SynthOptions& opts) {
  if (num_classes < 2) throw std::invalid_argument("synth_shapes: num_classes must be >= 2");
  if (count < 0 || height < 1 || width < 1) throw std::invalid_argument("synth_shapes: bad size");
  std::vector<SegSample> out;
  const double size = static_cast<double>(std::min(height, width));
  for (int64_t i = 0; i < count; ++i) {
    std::mt19937_64 rng = sample_rng(seed, 0, i);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    std::normal_distribution<float> noise(0.0f, 0.025f);

    SegSample s;
    char name[32];
    std::snprintf(name, sizeof name, "synth_%05lld", static_cast<long long>(i));
    s.name = name;
    s.image = Tensor<float>(Shape{1, 3, height, width});
    s.mask = LabelMap(1, height, width);

    // tissue-like background: warm base, low-frequency undulation, grain
    const std::array<double, 3> base{uni(0.55, 0.75), uni(0.22, 0.38), uni(0.22, 0.36)};
    const double fx = uni(1.0, 3.0) * 2 * std::numbers::pi / static_cast<double>(width);
    const double fy = uni(1.0, 3.0) * 2 * std::numbers::pi / static_cast<double>(height);
    const double phase = uni(0.0, 2 * std::numbers::pi);
    for (int64_t y = 0; y < height; ++y) {
      for (int64_t x = 0; x < width; ++x) {
        const double wave = 0.06 * std::sin(fx * static_cast<double>(x) + phase) *
                            std::cos(fy * static_cast<double>(y) - phase);
        for (int c = 0; c < 3; ++c) {
          s.image.at(0, c, y, x) = static_cast<float>(base[c] + wave) + noise(rng);
        }
      }
    }

    const int64_t fg_classes = num_classes - 1;
    const int shapes = 1 + static_cast<int>(rng() % 2);
    for (int k = 0; k < shapes; ++k) {
      const int64_t cls = k == 0 ? 1 + i % fg_classes : 1 + static_cast<int64_t>(rng() % fg_classes);
      Shape2D sh;
      sh.kind = static_cast<int>((cls - 1) % 3);
      sh.cx = uni(0.2, 0.8) * static_cast<double>(width);
      sh.cy = uni(0.2, 0.8) * static_cast<double>(height);
      sh.angle = uni(0.0, std::numbers::pi);
      if (sh.kind == 0) {
        sh.a = uni(0.20, 0.30) * size;
        sh.b = std::max(uni(0.05, 0.07) * size, opts.min_half_width);
      } else if (sh.kind == 1) {
        sh.angle = uni(0.0, 2 * std::numbers::pi);
        sh.a = uni(0.25, 0.35) * size;
        sh.b = uni(12.0, 20.0) * std::numbers::pi / 180.0;
        sh.b = std::max(sh.b, std::atan(opts.min_half_width / (kWedgeCut * sh.a)));
      } else {
        sh.a = uni(0.10, 0.16) * size;
        sh.b = std::max(uni(0.06, 0.09) * size, opts.min_half_width);
      }
      const auto tint = class_tint(cls);
      const bool highlight = opts.highlights && u01(rng) < 0.5;
      const double hl_pos = uni(0.3, 0.7);
      const bool shadow = opts.shadows && u01(rng) < 0.5;
      const double sdx = uni(2.0, 4.0), sdy = uni(2.0, 4.0);

      for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
          const auto px = static_cast<double>(x), py = static_cast<double>(y);
          if (sh.contains(px, py)) {
            s.mask.at(0, y, x) = static_cast<int32_t>(cls);
            const double t = sh.along(px, py);
            double shade = 0.8 + 0.2 * t;
            if (highlight && std::abs(t - hl_pos) < 0.06) shade += 0.25;
            for (int c = 0; c < 3; ++c) {
              s.image.at(0, c, y, x) = static_cast<float>(tint[c] * shade) + noise(rng);
            }
          } else if (shadow && s.mask.at(0, y, x) == 0 && sh.contains(px - sdx, py - sdy)) {
            for (int c = 0; c < 3; ++c) s.image.at(0, c, y, x) *= 0.7f;
          }
        }
      }
    }
    for (float& v : s.image.data()) v = std::clamp(v, 0.0f, 1.0f);
    out.push_back(std::move(s));
  }
  return out;
}

// --- batching -------------------------------------------------------------------

std::vector<std::vector<int64_t>> batch_indices(int64_t count, int64_t batch_size,
                                                std::optional<uint64_t> seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  std::vector<int64_t> order(static_cast<std::size_t>(count));
  for (int64_t i = 0; i < count; ++i) order[i] = i;
  if (seed) {
    std::mt19937_64 rng(*seed);
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle implementation.
    for (int64_t i = count - 1; i > 0; --i) {
      const auto j = static_cast<int64_t>(rng() % static_cast<uint64_t>(i + 1));
      std::swap(order[i], order[j]);
    }
  }
  std::vector<std::vector<int64_t>> out;
  for (int64_t i = 0; i < count; i += batch_size) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(count, i + batch_size));
  }
  return out;
}

Tensor<float> normalize_image(const Tensor<float>& image, const std::array<double, 3>& mean,
                              const std::array<double, 3>& stddev) {
  const Shape s = image.shape();
  Tensor<float> out(s);
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      const auto m = static_cast<float>(mean[c % 3]);
      const auto inv = static_cast<float>(1.0 / stddev[c % 3]);
      const float* src = image.plane(n, c);
      float* dst = out.plane(n, c);
      for (int64_t i = 0; i < s.plane(); ++i) dst[i] = (src[i] - m) * inv;
    }
  }
  return out;
}

SegBatch make_batch(const std::vector<SegSample>& samples, const std::vector<int64_t>& indices,
                    const std::array<double, 3>& mean, const std::array<double, 3>& stddev) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const Shape first = samples.at(static_cast<std::size_t>(indices[0])).image.shape();
  const auto n = static_cast<int64_t>(indices.size());
  SegBatch b;
  b.indices = indices;
  b.images = Tensor<float>(Shape{n, 3, first.h, first.w});
  b.masks = LabelMap(n, first.h, first.w);
  const int64_t plane = first.h * first.w;
  for (int64_t i = 0; i < n; ++i) {
    const SegSample& s = samples.at(static_cast<std::size_t>(indices[i]));
    if (!(s.image.shape() == first)) {
      throw ShapeError("make_batch: sample " + s.name + " has shape " + s.image.shape().str() +
                       ", batch expects " + first.str());
    }
    const Tensor<float> norm = normalize_image(s.image, mean, stddev);
    std::copy(norm.data().begin(), norm.data().end(), b.images.data().begin() + i * 3 * plane);
    std::copy(s.mask.data.begin(), s.mask.data.end(), b.masks.data.begin() + i * plane);
  }
  return b;
}

bool in_validation_split(const std::string& name, double fraction) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return static_cast<double>(h % 10000) < fraction * 10000.0;
}

}  // namespace lwanet
