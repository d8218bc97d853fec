#include "lwanet/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "lwanet/blocks.hpp"
#include "lwanet/kernels.hpp"

namespace lwanet {

LayerCount count_layer(const ConvSpec& spec, const Shape& input) {
  spec.validate();
  const Shape out = spec.output_shape(input);
  LayerCount c;
  c.macs = spec.kernel * spec.kernel * (spec.in_channels / spec.groups) * spec.out_channels * out.h * out.w;
  c.params = spec.weight_shape().numel() + (spec.has_bias ? spec.out_channels : 0);
  return c;
}

LayerCount count_layer(const DSConvDescriptor& ds, const Shape& input) {
  ConvSpec dw;
  dw.in_channels = dw.out_channels = dw.groups = ds.channels;
  dw.kernel = ds.kernel;
  dw.stride = ds.stride;
  dw.padding = (ds.kernel - 1) / 2;
  ConvSpec pw;
  pw.in_channels = ds.channels;
  pw.out_channels = ds.out_channels;
  pw.kernel = 1;
  const LayerCount a = count_layer(dw, input);
  const LayerCount b = count_layer(pw, dw.output_shape(input));
  return {a.macs + b.macs, blocks::ds_conv_param_count(ds.channels, ds.out_channels, ds.kernel)};
}

int64_t node_macs(const LayerNode& node) {
  const ConvSpec& s = node.spec;
  switch (node.kind) {
    case LayerKind::kConv:
    case LayerKind::kDepthwiseConv:
      return s.kernel * s.kernel * (s.in_channels / s.groups) * s.out_channels * node.output.h *
             node.output.w;
    case LayerKind::kTransposedConv:
      // every input pixel scatters a k x k x d2 patch
      return s.kernel * s.kernel * s.in_channels * s.out_channels * node.input.h * node.input.w;
    default:
      return 0;
  }
}

double ds_cost_ratio(int64_t k, int64_t d1, int64_t d2) {
  if (k < 1 || d1 < 1 || d2 < 1) throw std::invalid_argument("ds_cost_ratio: k, d1, d2 must be >= 1");
  return 1.0 / static_cast<double>(d2) + 1.0 / static_cast<double>(k * k);
}

bool ds_cost_identity_exact(int64_t k, int64_t d1, int64_t d2, int64_t m, int64_t n) {
  ConvSpec std_spec;
  std_spec.in_channels = d1;
  std_spec.out_channels = d2;
  std_spec.kernel = k;
  std_spec.padding = (k - 1) / 2;
  const Shape in{1, d1, m, n};
  const auto standard = static_cast<__int128>(count_layer(std_spec, in).macs);
  const auto ds = static_cast<__int128>(count_layer(DSConvDescriptor{d1, d2, k, 1}, in).macs);
  return ds * (k * k * d2) == standard * (k * k + d2);
}

const StageCost& CostReport::stage(Stage s) const {
  switch (s) {
    case Stage::kEncoder: return encoder;
    case Stage::kDecoder: return decoder;
    case Stage::kHead: return head;
  }
  return head;
}

CostReport count_model(const NetworkConfig& cfg, const Shape& input) {
  const NetworkGraph g = describe_network(cfg, input);
  std::map<std::string, const TensorDecl*> decls;
  for (const auto& d : g.decls) decls[d.name] = &d;

  CostReport r;
  r.input = input;
  for (const auto& node : g.layers) {
    LayerCost row;
    row.name = node.name;
    row.kind = node.kind;
    row.stage = node.stage;
    row.output = node.output;
    row.macs = node_macs(node);
    for (const auto& p : node.params) {
      const TensorDecl& d = *decls.at(p);
      row.params += d.shape.numel();
      if (d.trainable()) row.trainable_params += d.shape.numel();
    }
    StageCost& st = node.stage == Stage::kEncoder   ? r.encoder
                    : node.stage == Stage::kDecoder ? r.decoder
                                                    : r.head;
    st.macs += row.macs;
    st.params += row.params;
    st.trainable_params += row.trainable_params;
    r.total_macs += row.macs;
    r.total_params += row.params;
    r.total_trainable_params += row.trainable_params;
    r.rows.push_back(std::move(row));
  }
  for (StageCost* st : {&r.encoder, &r.decoder, &r.head}) {
    st->mac_percent = r.total_macs > 0 ? 100.0 * static_cast<double>(st->macs) / static_cast<double>(r.total_macs) : 0.0;
  }
  return r;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool right = false) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return right ? fill + s : s + fill;
}

}  // namespace

std::string CostReport::to_table(int flops_per_mac, bool per_layer) const {
  const auto scale = static_cast<int64_t>(flops_per_mac);
  const char* unit = flops_per_mac == 1 ? "MACs" : "FLOPs";
  std::ostringstream o;
  o << "input " << input.str() << ", " << flops_per_mac << " FLOP" << (flops_per_mac == 1 ? "" : "s")
    << " per multiply-accumulate\n";
  if (per_layer) {
    std::size_t w = 5;
    for (const auto& r : rows) w = std::max(w, r.name.size());
    o << pad("layer", w) << "  " << pad("kind", 16) << pad("stage", 9) << pad("output", 20)
      << pad(unit, 14, true) << pad("params", 10, true) << '\n';
    for (const auto& r : rows) {
      o << pad(r.name, w) << "  " << pad(to_string(r.kind), 16) << pad(to_string(r.stage), 9)
        << pad(r.output.str(), 20) << pad(std::to_string(r.macs * scale), 14, true)
        << pad(std::to_string(r.params), 10, true) << '\n';
    }
    o << '\n';
  }
  o << pad("stage", 9) << pad(std::string("G") + unit, 12, true) << pad("percent", 10, true)
    << pad("params", 12, true) << pad("trainable", 12, true) << '\n';
  for (Stage s : {Stage::kEncoder, Stage::kDecoder, Stage::kHead}) {
    const StageCost& st = stage(s);
    o << pad(to_string(s), 9) << pad(fmt("%.4f", static_cast<double>(st.macs * scale) / 1e9), 12, true)
      << pad(fmt("%.2f%%", st.mac_percent), 10, true) << pad(std::to_string(st.params), 12, true)
      << pad(std::to_string(st.trainable_params), 12, true) << '\n';
  }
  o << pad("total", 9) << pad(fmt("%.4f", static_cast<double>(total_macs * scale) / 1e9), 12, true)
    << pad("100.00%", 10, true) << pad(std::to_string(total_params), 12, true)
    << pad(std::to_string(total_trainable_params), 12, true) << '\n';
  return o.str();
}

nlohmann::ordered_json CostReport::to_json(int flops_per_mac, bool per_layer) const {
  const auto scale = static_cast<int64_t>(flops_per_mac);
  nlohmann::ordered_json j;
  j["input"] = {input.n, input.c, input.h, input.w};
  j["convention"] = flops_per_mac == 1 ? "1 MAC = 1 FLOP" : "1 MAC = 2 FLOPs";
  j["flops_per_mac"] = flops_per_mac;
  auto stage_json = [&](const StageCost& st) {
    return nlohmann::ordered_json{{"macs", st.macs},
                                  {"flops", st.macs * scale},
                                  {"gflops", static_cast<double>(st.macs * scale) / 1e9},
                                  {"percent", st.mac_percent},
                                  {"params", st.params},
                                  {"trainable_params", st.trainable_params}};
  };
  j["stages"] = {{"encoder", stage_json(encoder)}, {"decoder", stage_json(decoder)}, {"head", stage_json(head)}};
  j["total"] = {{"macs", total_macs},
                {"flops", total_macs * scale},
                {"gflops", static_cast<double>(total_macs * scale) / 1e9},
                {"params", total_params},
                {"trainable_params", total_trainable_params}};
  if (per_layer) {
    auto& layers = j["layers"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      layers.push_back({{"name", r.name},
                        {"kind", to_string(r.kind)},
                        {"stage", to_string(r.stage)},
                        {"output", {r.output.n, r.output.c, r.output.h, r.output.w}},
                        {"flops", r.macs * scale},
                        {"params", r.params}});
    }
  }
  return j;
}

nlohmann::ordered_json LatencyStats::to_json() const {
  return {{"input", {input.n, input.c, input.h, input.w}},
          {"warmup", warmup},
          {"iters", iters},
          {"workers", workers},
          {"mean_ms", mean_ms},
          {"p50_ms", p50_ms},
          {"p95_ms", p95_ms},
          {"min_ms", min_ms},
          {"max_ms", max_ms},
          {"fps", fps}};
}

std::string LatencyStats::to_table() const {
  std::ostringstream o;
  o << "input " << input.str() << ", " << iters << " iters after " << warmup << " warmup, "
    << workers << " worker" << (workers == 1 ? "" : "s") << '\n';
  o << pad("mean_ms", 12, true) << pad("p50_ms", 12, true) << pad("p95_ms", 12, true)
    << pad("fps", 12, true) << '\n';
  o << pad(fmt("%.3f", mean_ms), 12, true) << pad(fmt("%.3f", p50_ms), 12, true)
    << pad(fmt("%.3f", p95_ms), 12, true) << pad(fmt("%.3f", fps), 12, true) << '\n';
  return o.str();
}

LatencyStats benchmark_latency(Model<float>& model, const Shape& input, int warmup, int iters,
                               uint64_t seed) {
  if (iters < 1) throw std::invalid_argument("benchmark_latency: iters must be >= 1");
  if (warmup < 0) throw std::invalid_argument("benchmark_latency: warmup must be >= 0");
  std::mt19937_64 rng(seed);
  const Tensor<float> raw = Tensor<float>::uniform(input, rng, 0.0f, 1.0f);
  const NetworkConfig& cfg = model.config();

  auto run_once = [&] {
    Tensor<float> x(input);
    const int64_t plane = input.h * input.w;
    for (int64_t n = 0; n < input.n; ++n) {
      for (int64_t c = 0; c < input.c; ++c) {
        const float mean = static_cast<float>(cfg.norm_mean[c % 3]);
        const float inv = static_cast<float>(1.0 / cfg.norm_std[c % 3]);
        const float* src = raw.plane(n, c);
        float* dst = x.plane(n, c);
        for (int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * inv;
      }
    }
    return model.logits(x);
  };

  for (int i = 0; i < warmup; ++i) run_once();
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor<float> out = run_once();
    const auto t1 = std::chrono::steady_clock::now();
    if (out.empty()) throw std::runtime_error("benchmark_latency: empty output");
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }

  LatencyStats s;
  s.input = input;
  s.warmup = warmup;
  s.iters = iters;
  s.workers = kernels::num_workers();
  double total = 0.0;
  for (double v : ms) total += v;
  s.mean_ms = total / static_cast<double>(iters);
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(iters))) - 1;
    return sorted[std::min(idx, sorted.size() - 1)];
  };
  s.p50_ms = rank(0.50);
  s.p95_ms = rank(0.95);
  s.min_ms = sorted.front();
  s.max_ms = sorted.back();
  s.fps = 1000.0 / s.mean_ms;
  return s;
}

}  // namespace lwanet
