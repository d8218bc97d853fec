#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "lwanet/weights_io.hpp"

using namespace lwanet;
namespace fs = std::filesystem;

namespace {

NetworkConfig tiny(bool afb = true) {
  NetworkConfig c;
  c.num_classes = 3;
  c.height = 32;
  c.width = 32;
  c.afb_enabled = afb;
  return c;
}

fs::path tmp(const std::string& name) { return fs::path(::testing::TempDir()) / ("lwanet_w_" + name); }

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const fs::path& p, const std::vector<uint8_t>& b) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

WeightErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const WeightFileError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no WeightFileError";
  return WeightErrorKind::kIo;
}

}  // namespace

TEST(Lwaw, SaveLoadSaveIsByteIdentical) {
  Model<float> m(tiny(), 3);
  save_weights(tmp("a.lwaw").string(), m);
  Model<float> other(tiny(), 99);
  const LoadReport r = load_weights(tmp("a.lwaw").string(), other, true);
  EXPECT_TRUE(r.missing.empty());
  EXPECT_TRUE(r.unexpected.empty());
  for (const auto& e : m.params().entries()) EXPECT_EQ(other.params().at(e.decl.name).vec(), e.value->vec());
  save_weights(tmp("b.lwaw").string(), other);
  EXPECT_EQ(slurp(tmp("a.lwaw")), slurp(tmp("b.lwaw")));
}

TEST(Lwaw, LayoutHeaderAndAlignment) {
  Model<float> m(tiny(), 0);
  const WeightArchive a = archive_from_store(m.params(), m.config().to_json());
  const std::vector<uint8_t> bytes = encode_archive(a);
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(std::memcmp(bytes.data(), "LWAWGT01", 8), 0);
  const uint32_t len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) | (static_cast<uint32_t>(bytes[11]) << 24);
  const auto manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  EXPECT_EQ(manifest["version"], 1);
  const size_t blob_start = (12 + len + 63) / 64 * 64;
  for (const auto& e : manifest["entries"]) {
    EXPECT_EQ((blob_start + e["offset"].get<size_t>()) % 64, 0u) << e["name"];
  }
  const WeightArchive back = decode_archive(bytes, "mem");
  EXPECT_EQ(back.config, a.config);
  ASSERT_EQ(back.entries.size(), a.entries.size());
  EXPECT_EQ(back.entries[5].kind, a.entries[5].kind);
  EXPECT_EQ(encode_archive(back), bytes);
}

TEST(Lwaw, DistinctErrorsForDistinctFaults) {
  Model<float> m(tiny(), 0);
  save_weights(tmp("good.lwaw").string(), m);
  const std::vector<uint8_t> good = slurp(tmp("good.lwaw"));

  EXPECT_EQ(kind_of([] { read_archive(tmp("does_not_exist.lwaw").string()); }), WeightErrorKind::kIo);

  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(kind_of([&] { decode_archive(bad, "x"); }), WeightErrorKind::kBadMagic);

  bad = good;
  bad[7] = '2';
  EXPECT_EQ(kind_of([&] { decode_archive(bad, "x"); }), WeightErrorKind::kVersionMismatch);

  bad.assign(good.begin(), good.end() - 100);
  EXPECT_EQ(kind_of([&] { decode_archive(bad, "x"); }), WeightErrorKind::kTruncated);
  bad.assign(good.begin(), good.begin() + 10);
  EXPECT_EQ(kind_of([&] { decode_archive(bad, "x"); }), WeightErrorKind::kTruncated);

  bad = good;
  bad[12] = '[';
  EXPECT_EQ(kind_of([&] { decode_archive(bad, "x"); }), WeightErrorKind::kCorrupt);

  Model<float> other_classes([] {
    NetworkConfig c = tiny();
    c.num_classes = 5;
    return c;
  }(), 0);
  EXPECT_EQ(kind_of([&] { load_weights(tmp("good.lwaw").string(), other_classes, false); }),
            WeightErrorKind::kShapeMismatch);

  Model<float> with_afb(tiny(true), 0), without_afb(tiny(false), 0);
  save_weights(tmp("noafb.lwaw").string(), without_afb);
  EXPECT_EQ(kind_of([&] { load_weights(tmp("noafb.lwaw").string(), with_afb, true); }), WeightErrorKind::kMissingKey);
  EXPECT_EQ(kind_of([&] { load_weights(tmp("good.lwaw").string(), without_afb, true); }),
            WeightErrorKind::kUnexpectedKey);

  const LoadReport lenient = load_weights(tmp("noafb.lwaw").string(), with_afb, false);
  EXPECT_FALSE(lenient.missing.empty());
  for (const auto& n : lenient.missing) EXPECT_NE(n.find(".afb."), std::string::npos);
}

TEST(Lwaw, KindTagsRoundTrip) {
  for (ParamKind k : {ParamKind::kConvWeight, ParamKind::kBias, ParamKind::kBnGamma, ParamKind::kBnBeta,
                      ParamKind::kRunningMean, ParamKind::kRunningVar}) {
    ParamKind back{};
    ASSERT_TRUE(parse_param_kind(param_kind_tag(k), back));
    EXPECT_EQ(back, k);
  }
  ParamKind dummy{};
  EXPECT_FALSE(parse_param_kind("adam_m", dummy));
  EXPECT_STREQ(param_kind_tag(ParamKind::kBnGamma), "bn_gamma");
}

TEST(Lwaw, EncoderImportIsAllOrNothing) {
  NetworkConfig donor_cfg = tiny();
  donor_cfg.num_classes = 7;  // different head, same encoder
  Model<float> donor(donor_cfg, 1);
  save_weights(tmp("donor.lwaw").string(), donor);

  Model<float> m(tiny(), 2);
  const auto head_before = m.params().at("head.weight").vec();
  import_pretrained_encoder(m, tmp("donor.lwaw").string());
  for (const auto& e : m.params().entries()) {
    if (is_encoder_param(e.decl.name)) EXPECT_EQ(e.value->vec(), donor.params().at(e.decl.name).vec()) << e.decl.name;
  }
  EXPECT_EQ(m.params().at("head.weight").vec(), head_before);

  // a donor missing one encoder tensor leaves the target untouched
  WeightArchive a = read_archive(tmp("donor.lwaw").string());
  a.entries.erase(std::find_if(a.entries.begin(), a.entries.end(),
                               [](const ArchiveEntry& e) { return e.name == "encoder.block5.project.weight"; }));
  write_archive(tmp("partial.lwaw").string(), a);
  Model<float> fresh(tiny(), 4);
  const auto stem_before = fresh.params().at("encoder.stem.conv.weight").vec();
  EXPECT_EQ(kind_of([&] { import_pretrained_encoder(fresh, tmp("partial.lwaw").string()); }),
            WeightErrorKind::kMissingKey);
  EXPECT_EQ(fresh.params().at("encoder.stem.conv.weight").vec(), stem_before);
}
