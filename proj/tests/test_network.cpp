#include <gtest/gtest.h>

#include <random>
#include <set>

#include "lwanet/network.hpp"

using namespace lwanet;

namespace {

NetworkConfig small(int64_t classes = 3) {
  NetworkConfig c;
  c.num_classes = classes;
  c.height = 64;
  c.width = 96;
  return c;
}

std::set<std::string> names_of(const Model<float>& m) {
  const auto v = m.params().names();
  return {v.begin(), v.end()};
}

}  // namespace

TEST(NetworkConfig, Validation) {
  NetworkConfig c;
  EXPECT_NO_THROW(c.validate());
  c.height = 100;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = NetworkConfig{};
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = NetworkConfig{};
  c.decoder_widths = {96, 30, 24};  // 30 is not divisible by the SE ratio 4
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.afb_enabled = false;
  EXPECT_NO_THROW(c.validate());
  c = NetworkConfig{};
  c.upsample_kernel = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(NetworkConfig, JsonRoundTripAndUnknownKeys) {
  NetworkConfig c = small(5);
  c.afb_enabled = false;
  c.decoder_widths = {64, 32, 16};
  const NetworkConfig back = NetworkConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json(), c.to_json());
  try {
    NetworkConfig::from_json(nlohmann::json{{"num_clases", 3}});
    FAIL() << "expected a throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("num_clases"), std::string::npos);
  }
}

TEST(Encoder, MobileNetV2ChannelSequence) {
  const auto seq = encoder_channel_sequence(NetworkConfig{});
  EXPECT_EQ(seq, (std::vector<int64_t>{32, 16, 24, 32, 64, 96, 160, 320, 1280}));
  NetworkConfig half;
  half.width_multiplier = 0.5;
  half.keep_final_encoder_conv = false;
  EXPECT_EQ(encoder_channel_sequence(half), (std::vector<int64_t>{16, 8, 16, 16, 32, 48, 80, 160}));
  EXPECT_EQ(make_divisible(20.0), 24);
  EXPECT_EQ(make_divisible(12.0), 16);
  EXPECT_EQ(make_divisible(4.0), 8);
}

TEST(Graph, TapsAndOutputStride) {
  const NetworkGraph g = describe_network(NetworkConfig{}, Shape{1, 3, 544, 960});
  EXPECT_EQ(g.taps.shapes[0], (Shape{1, 24, 136, 240}));
  EXPECT_EQ(g.taps.shapes[1], (Shape{1, 32, 68, 120}));
  EXPECT_EQ(g.taps.shapes[2], (Shape{1, 96, 34, 60}));
  EXPECT_EQ(g.taps.shapes[3], (Shape{1, 1280, 17, 30}));
  EXPECT_EQ(g.logits, (Shape{1, 11, 136, 240}));
  EXPECT_THROW(describe_network(NetworkConfig{}, Shape{1, 3, 544, 970}), ShapeError);
  EXPECT_THROW(describe_network(NetworkConfig{}, Shape{1, 1, 544, 960}), ShapeError);
}

TEST(Model, ForwardShapesMatchGraph) {
  Model<float> m(small(), 1);
  std::mt19937_64 rng(2);
  const Tensor<float> x = Tensor<float>::randn(Shape{2, 3, 64, 96}, rng);
  const ForwardResult<float> r = m.forward(nullptr, Var<float>::constant(x), BnMode::kEval);
  EXPECT_EQ(r.logits.shape(), (Shape{2, 3, 16, 24}));
  EXPECT_EQ(r.taps[0].shape(), (Shape{2, 24, 16, 24}));
  EXPECT_EQ(r.taps[3].shape(), (Shape{2, 1280, 2, 3}));
  EXPECT_TRUE(r.logits.value().all_finite());
  // other input sizes divisible by 32 run on the same weights
  EXPECT_EQ(m.logits(Tensor<float>::randn(Shape{1, 3, 32, 32}, rng)).shape(), (Shape{1, 3, 8, 8}));
  EXPECT_THROW(m.logits(Tensor<float>(Shape{1, 3, 48, 32})), ShapeError);
}

TEST(Model, SameSeedSameWeightsDifferentSeedDifferentWeights) {
  Model<float> a(small(), 5), b(small(), 5), c(small(), 6);
  const auto& wa = a.params().at("encoder.stem.conv.weight");
  EXPECT_EQ(wa.vec(), b.params().at("encoder.stem.conv.weight").vec());
  EXPECT_NE(wa.vec(), c.params().at("encoder.stem.conv.weight").vec());
}

TEST(Model, AfbSwitchChangesOnlyAfbTensors) {
  NetworkConfig off = small();
  off.afb_enabled = false;
  const auto on_names = names_of(Model<float>(small(), 0));
  const auto off_names = names_of(Model<float>(off, 0));
  std::vector<std::string> only_on;
  for (const auto& n : on_names) {
    if (!off_names.count(n)) only_on.push_back(n);
  }
  for (const auto& n : off_names) EXPECT_TRUE(on_names.count(n)) << n;
  ASSERT_FALSE(only_on.empty());
  for (const auto& n : only_on) EXPECT_NE(n.find(".afb."), std::string::npos) << n;
}

TEST(Model, EncoderParamsArePrefixed) {
  Model<float> m(small(), 0);
  int64_t enc = 0;
  for (const auto& n : m.params().names()) {
    if (is_encoder_param(n)) ++enc;
  }
  EXPECT_GT(enc, 100);
  EXPECT_TRUE(is_encoder_param("encoder.block3.expand.weight"));
  EXPECT_FALSE(is_encoder_param("decoder.stage4.afb.low.alpha.weight"));
  EXPECT_FALSE(is_encoder_param("head.weight"));
}

TEST(Model, TrainModeUpdatesRunningStatsEvalDoesNot) {
  Model<float> m(small(), 0);
  std::mt19937_64 rng(3);
  const Tensor<float> x = Tensor<float>::randn(Shape{2, 3, 64, 96}, rng);
  const auto before = m.params().at("encoder.stem.bn.running_mean").vec();
  m.forward(nullptr, Var<float>::constant(x), BnMode::kEval);
  EXPECT_EQ(m.params().at("encoder.stem.bn.running_mean").vec(), before);
  m.forward(nullptr, Var<float>::constant(x), BnMode::kTrain);
  EXPECT_NE(m.params().at("encoder.stem.bn.running_mean").vec(), before);
}

TEST(PredictClasses, UpsamplesThenTakesFirstMaximum) {
  // two classes on a 1x2 grid: class 1 wins left, class 0 right, tie in between
  Tensor<float> logits(Shape{1, 2, 1, 2}, {0.0f, 1.0f, 1.0f, 0.0f});
  const auto p = predict_classes(logits, 2);
  ASSERT_EQ(p.size(), 8u);
  EXPECT_EQ(p[0], 1);
  EXPECT_EQ(p[3], 0);
  Tensor<float> tie(Shape{1, 3, 1, 1}, {2.0f, 2.0f, 2.0f});
  EXPECT_EQ(predict_classes(tie, 1), (std::vector<int32_t>{0}));
}
