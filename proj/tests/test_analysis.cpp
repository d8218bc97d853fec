#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lwanet/analysis.hpp"
#include "lwanet/blocks.hpp"

using namespace lwanet;

namespace {

ConvSpec standard(int64_t d1, int64_t d2, int64_t k) {
  ConvSpec c;
  c.in_channels = d1;
  c.out_channels = d2;
  c.kernel = k;
  c.padding = (k - 1) / 2;
  return c;
}

}  // namespace

TEST(DsCost, RatioMatchesMeasuredCountsExactly) {
  std::mt19937_64 rng(13);
  auto pick = [&](int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); };
  for (int i = 0; i < 50; ++i) {
    const int64_t k = 2 * pick(0, 3) + 1, d1 = pick(1, 512), d2 = pick(1, 512), m = pick(k, 64), n = pick(k, 64);
    EXPECT_TRUE(ds_cost_identity_exact(k, d1, d2, m, n));
    const Shape in{1, d1, m, n};
    const double ds = static_cast<double>(count_layer(DSConvDescriptor{d1, d2, k, 1}, in).macs);
    const double st = static_cast<double>(count_layer(standard(d1, d2, k), in).macs);
    EXPECT_NEAR(ds / st, ds_cost_ratio(k, d1, d2), 1e-15);
  }
}

TEST(DsCost, LargeWidthLimitIsAboutNineFoldForK3) {
  EXPECT_NEAR(1.0 / ds_cost_ratio(3, 1024, 1 << 20), 9.0, 1e-3);
  EXPECT_GT(1.0 / ds_cost_ratio(3, 320, 1280), 8.9);
  EXPECT_DOUBLE_EQ(ds_cost_ratio(3, 4, 4), 0.25 + 1.0 / 9.0);
}

TEST(CountLayer, HandCounts) {
  const LayerCount c = count_layer(standard(3, 32, 3), Shape{1, 3, 224, 224});
  EXPECT_EQ(c.macs, 3LL * 32 * 9 * 224 * 224);
  EXPECT_EQ(c.params, 3 * 32 * 9);
  ConvSpec dw = standard(32, 32, 3);
  dw.groups = 32;
  dw.stride = 2;
  EXPECT_EQ(count_layer(dw, Shape{1, 32, 112, 112}).macs, 32LL * 9 * 56 * 56);
  const LayerCount ds = count_layer(DSConvDescriptor{32, 64, 3, 1}, Shape{1, 32, 10, 10});
  EXPECT_EQ(ds.macs, (9LL * 32 + 32 * 64) * 100);
  EXPECT_EQ(ds.params, blocks::ds_conv_param_count(32, 64, 3));
}

TEST(CostReport, DefaultModelAt960x544) {
  const CostReport r = count_model(NetworkConfig{}, Shape{1, 3, 544, 960});
  EXPECT_NEAR(static_cast<double>(r.encoder.macs) / 1e9, 3.11, 0.05 * 3.11);
  EXPECT_LE(r.decoder.macs, 300'000'000);
  EXPECT_GT(r.encoder.mac_percent, 85.0);
  EXPECT_NEAR(r.encoder.mac_percent + r.decoder.mac_percent + r.head.mac_percent, 100.0, 1e-9);
  EXPECT_EQ(r.encoder.macs + r.decoder.macs + r.head.macs, r.total_macs);
  int64_t rows = 0;
  for (const auto& row : r.rows) rows += row.macs;
  EXPECT_EQ(rows, r.total_macs);
  EXPECT_LT(r.total_trainable_params, r.total_params);
  Model<float> m(NetworkConfig{}, 0);
  EXPECT_EQ(r.total_params, m.params().element_count(false));
  EXPECT_EQ(r.total_trainable_params, m.params().element_count(true));
}

TEST(CostReport, AfbAddsParametersAndFinalConvDominatesWidth) {
  NetworkConfig off;
  off.afb_enabled = false;
  const Shape in{1, 3, 544, 960};
  const CostReport on_r = count_model(NetworkConfig{}, in), off_r = count_model(off, in);
  EXPECT_GT(on_r.total_trainable_params, off_r.total_trainable_params);
  EXPECT_EQ(on_r.encoder.macs, off_r.encoder.macs);
  NetworkConfig no_final;
  no_final.keep_final_encoder_conv = false;
  EXPECT_LT(count_model(no_final, in).total_macs, on_r.total_macs);
}

TEST(CostReport, AreaLinearUpToTheSqueezeTerm) {
  // Everything but the SE convolutions on pooled vectors scales with area.
  const NetworkConfig cfg;
  const CostReport small = count_model(cfg, Shape{1, 3, 256, 320});
  const CostReport big = count_model(cfg, Shape{1, 3, 512, 640});
  int64_t se = 0;
  for (const auto& row : small.rows) {
    if (row.output.h == 1 && row.output.w == 1) se += row.macs;
  }
  EXPECT_GT(se, 0);
  EXPECT_EQ(big.total_macs - 4 * small.total_macs, -3 * se);
}

TEST(CostReport, TableAndJsonAgree) {
  const CostReport r = count_model(NetworkConfig{}, Shape{1, 3, 512, 640});
  const auto j = r.to_json(2, false);
  EXPECT_EQ(j["total"]["flops"].get<int64_t>(), 2 * r.total_macs);
  EXPECT_EQ(j["total"]["macs"].get<int64_t>(), r.total_macs);
  const std::string t = r.to_table(1, true);
  EXPECT_NE(t.find("encoder.stem.conv"), std::string::npos);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", static_cast<double>(r.total_macs) / 1e9);
  EXPECT_NE(t.find(buf), std::string::npos);
}

TEST(Latency, StatsAreOrdered) {
  NetworkConfig cfg;
  cfg.num_classes = 3;
  Model<float> m(cfg, 0);
  const LatencyStats s = benchmark_latency(m, Shape{1, 3, 64, 64}, 1, 5);
  EXPECT_EQ(s.iters, 5);
  EXPECT_GT(s.mean_ms, 0.0);
  EXPECT_LE(s.min_ms, s.p50_ms);
  EXPECT_LE(s.p50_ms, s.p95_ms);
  EXPECT_LE(s.p95_ms, s.max_ms);
  EXPECT_NEAR(s.fps, 1000.0 / s.mean_ms, 1e-9);
  EXPECT_EQ(s.to_json()["mean_ms"].get<double>(), s.mean_ms);
}
