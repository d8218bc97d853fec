#include "lwanet/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lwanet/blocks.hpp"
#include "lwanet/kernels.hpp"

namespace lwanet {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("network config: " + msg);
}

constexpr int kTapBlocks[3] = {3, 6, 13};  // last block at strides 4, 8, 16
constexpr const char* kStageNames[3] = {"decoder.stage16", "decoder.stage8", "decoder.stage4"};

std::string block_name(int idx) { return "encoder.block" + std::to_string(idx); }

int64_t stem_channels(const NetworkConfig& cfg) { return make_divisible(32 * cfg.width_multiplier); }

int64_t final_channels(const NetworkConfig& cfg) {
  return make_divisible(1280 * std::max(1.0, cfg.width_multiplier));
}

void check_input(const Shape& in) {
  if (in.c != 3 || in.h <= 0 || in.w <= 0 || in.h % 32 != 0 || in.w % 32 != 0) {
    throw ShapeError("network input " + in.str() +
                     ": expected 3 channels and spatial size divisible by 32");
  }
}

}  // namespace

int64_t make_divisible(double v, int64_t divisor) {
  const auto d = static_cast<double>(divisor);
  int64_t out = std::max<int64_t>(divisor, static_cast<int64_t>((v + d / 2) / d) * divisor);
  if (static_cast<double>(out) < 0.9 * v) out += divisor;
  return out;
}

const std::vector<EncoderStage>& mobilenet_v2_stages() {
  static const std::vector<EncoderStage> stages{
      {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
      {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
  };
  return stages;
}

std::vector<int64_t> encoder_channel_sequence(const NetworkConfig& cfg) {
  std::vector<int64_t> out{stem_channels(cfg)};
  for (const auto& st : mobilenet_v2_stages()) {
    out.push_back(make_divisible(static_cast<double>(st.channels) * cfg.width_multiplier));
  }
  if (cfg.keep_final_encoder_conv) out.push_back(final_channels(cfg));
  return out;
}

void NetworkConfig::validate() const {
  require(num_classes >= 2, "num_classes must be >= 2 (background plus at least one class)");
  require(height > 0 && width > 0 && height % 32 == 0 && width % 32 == 0,
          "input size " + std::to_string(height) + "x" + std::to_string(width) +
              " must be positive and divisible by 32");
  require(width_multiplier > 0, "width_multiplier must be positive");
  require(se_ratio >= 1, "se_ratio must be >= 1");
  require(decoder_widths.size() == 3, "decoder_widths needs 3 entries (strides 16, 8, 4)");
  for (int64_t w : decoder_widths) {
    require(w > 0, "decoder widths must be positive");
    if (afb_enabled) require(w % se_ratio == 0, "decoder width " + std::to_string(w) +
                                                    " not divisible by se_ratio");
  }
  require(upsample_kernel >= 2 && upsample_kernel % 2 == 0, "upsample_kernel must be even and >= 2");
  for (double s : norm_std) require(s > 0, "norm_std entries must be positive");
}

nlohmann::ordered_json NetworkConfig::to_json() const {
  nlohmann::ordered_json j;
  j["num_classes"] = num_classes;
  j["input_size"] = {height, width};
  j["width_multiplier"] = width_multiplier;
  j["se_ratio"] = se_ratio;
  j["decoder_widths"] = decoder_widths;
  j["upsample_kernel"] = upsample_kernel;
  j["afb_enabled"] = afb_enabled;
  j["keep_final_encoder_conv"] = keep_final_encoder_conv;
  j["norm_mean"] = norm_mean;
  j["norm_std"] = norm_std;
  return j;
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  if (!j.is_object()) throw std::invalid_argument("network config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "num_classes") c.num_classes = v.get<int64_t>();
    else if (key == "input_size") {
      const auto hw = v.get<std::vector<int64_t>>();
      if (hw.size() != 2) throw std::invalid_argument("network.input_size needs [height, width]");
      c.height = hw[0];
      c.width = hw[1];
    } else if (key == "width_multiplier") c.width_multiplier = v.get<double>();
    else if (key == "se_ratio") c.se_ratio = v.get<int64_t>();
    else if (key == "decoder_widths") c.decoder_widths = v.get<std::vector<int64_t>>();
    else if (key == "upsample_kernel") c.upsample_kernel = v.get<int64_t>();
    else if (key == "afb_enabled") c.afb_enabled = v.get<bool>();
    else if (key == "keep_final_encoder_conv") c.keep_final_encoder_conv = v.get<bool>();
    else if (key == "norm_mean") c.norm_mean = v.get<std::array<double, 3>>();
    else if (key == "norm_std") c.norm_std = v.get<std::array<double, 3>>();
    else throw std::invalid_argument("unknown key network." + key);
  }
  return c;
}

bool is_encoder_param(const std::string& name) { return name.rfind("encoder.", 0) == 0; }

NetworkGraph describe_network(const NetworkConfig& cfg, const Shape& input) {
  cfg.validate();
  check_input(input);
  GraphBuilder g(input.n);
  NetworkGraph out;

  g.set_stage(Stage::kEncoder);
  Shape s = blocks::describe_conv_bn(g, "encoder.stem", input, stem_channels(cfg), 3, 2);
  int idx = 1;
  int tap = 0;
  for (const auto& st : mobilenet_v2_stages()) {
    const int64_t c = make_divisible(static_cast<double>(st.channels) * cfg.width_multiplier);
    for (int64_t r = 0; r < st.repeats; ++r, ++idx) {
      s = blocks::describe_inverted_residual(g, block_name(idx), s, c,
                                             static_cast<double>(st.expand_ratio),
                                             r == 0 ? st.stride : 1);
      if (tap < 3 && idx == kTapBlocks[tap]) {
        out.taps.names[tap] = block_name(idx);
        out.taps.shapes[tap++] = s;
      }
    }
  }
  out.taps.names[3] = block_name(idx - 1);
  if (cfg.keep_final_encoder_conv) {
    s = blocks::describe_conv_bn(g, "encoder.final", s, final_channels(cfg), 1, 1);
    out.taps.names[3] = "encoder.final";
  }
  out.taps.shapes[3] = s;

  g.set_stage(Stage::kDecoder);
  Shape d = blocks::describe_conv_bn(g, "decoder.reduce", s, cfg.decoder_widths[0], 1, 1);
  for (int i = 0; i < 3; ++i) {
    const std::string name = kStageNames[i];
    const int64_t width = cfg.decoder_widths[i];
    const Shape up = blocks::describe_upsample(g, name + ".up", d, width, cfg.upsample_kernel, 2);
    const Shape skip = blocks::describe_conv_bn(g, name + ".skip", out.taps.shapes[2 - i], width, 1, 1);
    const Shape fused = cfg.afb_enabled ? blocks::describe_afb(g, name + ".afb", skip, up, cfg.se_ratio)
                                        : g.add(name + ".merge", skip, up);
    d = blocks::describe_ds_conv(g, name + ".ds", fused, width, 3, 1);
  }

  g.set_stage(Stage::kHead);
  ConvSpec head;
  head.in_channels = d.c;
  head.out_channels = cfg.num_classes;
  head.kernel = 1;
  head.has_bias = true;
  out.logits = g.conv("head", head, d);

  out.decls = g.decls();
  out.layers = g.layers();
  return out;
}

template <typename T>
Model<T>::Model(NetworkConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  graph_ = describe_network(cfg_, {1, 3, cfg_.height, cfg_.width});

  const std::vector<int64_t> ch = encoder_channel_sequence(cfg_);
  const int64_t expected_c[4] = {ch[2], ch[3], ch[5], ch.back()};
  for (int i = 0; i < 4; ++i) {
    const int64_t stride = int64_t{4} << i;
    const Shape want{1, expected_c[i], cfg_.height / stride, cfg_.width / stride};
    if (!(graph_.taps.shapes[i] == want)) {
      throw ShapeError("encoder tap " + graph_.taps.names[i] + ": got " +
                       graph_.taps.shapes[i].str() + ", expected " + want.str());
    }
  }

  std::mt19937_64 rng(seed);
  params_.initialize(graph_.decls, rng);
}

template <typename T>
ForwardResult<T> Model<T>::forward(Tape<T>* tape, const Var<T>& x, BnMode mode) {
  check_input(x.shape());
  ParamBinder<T> p(params_, tape);
  BnOptions<T> bn;
  bn.mode = mode;
  ForwardResult<T> out;

  Var<T> s = blocks::conv_bn(x, blocks::bind_conv_bn(p, "encoder.stem", 2), bn);
  int idx = 1;
  int tap = 0;
  for (const auto& st : mobilenet_v2_stages()) {
    for (int64_t r = 0; r < st.repeats; ++r, ++idx) {
      s = blocks::inverted_residual(
          s, blocks::bind_inverted_residual(p, block_name(idx), r == 0 ? st.stride : 1), bn);
      if (tap < 3 && idx == kTapBlocks[tap]) out.taps[tap++] = s;
    }
  }
  if (cfg_.keep_final_encoder_conv) {
    s = blocks::conv_bn(s, blocks::bind_conv_bn(p, "encoder.final", 1), bn);
  }
  out.taps[3] = s;

  Var<T> d = blocks::conv_bn(s, blocks::bind_conv_bn(p, "decoder.reduce", 1), bn);
  for (int i = 0; i < 3; ++i) {
    const std::string name = kStageNames[i];
    Var<T> up = blocks::upsample_block(d, blocks::bind_upsample(p, name + ".up"), bn);
    Var<T> skip = blocks::conv_bn(out.taps[2 - i], blocks::bind_conv_bn(p, name + ".skip", 1), bn);
    Var<T> fused = cfg_.afb_enabled ? blocks::afb(skip, up, blocks::bind_afb(p, name + ".afb"))
                                    : op::add(skip, up);
    d = blocks::ds_conv(fused, blocks::bind_ds_conv(p, name + ".ds"), 1, bn);
  }

  const Var<T> hw = p("head.weight");
  const Var<T> hb = p("head.bias");
  ConvSpec head;
  head.name = "head";
  head.in_channels = hw.shape().c;
  head.out_channels = hw.shape().n;
  head.kernel = 1;
  head.has_bias = true;
  out.logits = op::conv2d(d, hw, &hb, head);
  return out;
}

template <typename T>
Tensor<T> Model<T>::logits(const Tensor<T>& x) {
  return forward(nullptr, Var<T>::constant(x), BnMode::kEval).logits.value();
}

template <typename T>
std::vector<int32_t> predict_classes(const Tensor<T>& logits, int64_t factor) {
  const Tensor<T> up = factor == 1 ? logits : kernels::bilinear_upsample(logits, factor);
  const Shape s = up.shape();
  const int64_t plane = s.h * s.w;
  std::vector<int32_t> out(static_cast<std::size_t>(s.n * plane));
  const T* d = up.data().data();
  for (int64_t n = 0; n < s.n; ++n) {
    const T* base = d + n * s.c * plane;
    for (int64_t i = 0; i < plane; ++i) {
      int32_t best = 0;
      T best_v = base[i];
      for (int64_t c = 1; c < s.c; ++c) {
        const T v = base[c * plane + i];
        if (v > best_v) {
          best_v = v;
          best = static_cast<int32_t>(c);
        }
      }
      out[static_cast<std::size_t>(n * plane + i)] = best;
    }
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template std::vector<int32_t> predict_classes(const Tensor<float>&, int64_t);
template std::vector<int32_t> predict_classes(const Tensor<double>&, int64_t);

}  // namespace lwanet
