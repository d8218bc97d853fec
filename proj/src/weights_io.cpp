#include "lwanet/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace lwanet {

static_assert(std::endian::native == std::endian::little, "LWAW blobs are stored little-endian");

namespace {

constexpr std::size_t kAlign = 64;
constexpr std::size_t kHeader = sizeof(kWeightMagic) + 4;

std::size_t align_up(std::size_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

[[noreturn]] void fail(WeightErrorKind kind, const std::string& msg) {
  throw WeightFileError(kind, msg);
}

}  // namespace

const char* to_string(WeightErrorKind kind) {
  switch (kind) {
    case WeightErrorKind::kIo: return "io";
    case WeightErrorKind::kBadMagic: return "bad_magic";
    case WeightErrorKind::kVersionMismatch: return "version_mismatch";
    case WeightErrorKind::kTruncated: return "truncated";
    case WeightErrorKind::kCorrupt: return "corrupt";
    case WeightErrorKind::kShapeMismatch: return "shape_mismatch";
    case WeightErrorKind::kMissingKey: return "missing_key";
    case WeightErrorKind::kUnexpectedKey: return "unexpected_key";
  }
  return "?";
}

const ArchiveEntry* WeightArchive::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const char* param_kind_tag(ParamKind kind) {
  switch (kind) {
    case ParamKind::kConvWeight: return "conv_weight";
    case ParamKind::kBias: return "bias";
    case ParamKind::kBnGamma: return "bn_gamma";
    case ParamKind::kBnBeta: return "bn_beta";
    case ParamKind::kRunningMean: return "running_mean";
    case ParamKind::kRunningVar: return "running_var";
  }
  return "?";
}

bool parse_param_kind(const std::string& tag, ParamKind& out) {
  for (ParamKind k : {ParamKind::kConvWeight, ParamKind::kBias, ParamKind::kBnGamma,
                      ParamKind::kBnBeta, ParamKind::kRunningMean, ParamKind::kRunningVar}) {
    if (tag == param_kind_tag(k)) {
      out = k;
      return true;
    }
  }
  return false;
}

std::vector<uint8_t> encode_archive(const WeightArchive& a) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "LWAW";
  manifest["version"] = kWeightVersion;
  manifest["config"] = a.config;
  auto& list = manifest["entries"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& e : a.entries) {
    const Shape s = e.value.shape();
    const std::size_t nbytes = static_cast<std::size_t>(e.value.numel()) * sizeof(float);
    list.push_back({{"name", e.name},
                    {"kind", e.kind},
                    {"dtype", "f32"},
                    {"shape", {s.n, s.c, s.h, s.w}},
                    {"offset", offset},
                    {"nbytes", nbytes}});
    offsets.push_back(offset);
    offset = align_up(offset + nbytes);
  }
  if (!a.extra.is_null()) manifest["extra"] = a.extra;

  const std::string text = manifest.dump();
  const std::size_t blob_start = align_up(kHeader + text.size());
  std::vector<uint8_t> out(blob_start + offset, 0);
  std::memcpy(out.data(), kWeightMagic, sizeof(kWeightMagic));
  const auto len = static_cast<uint32_t>(text.size());
  std::memcpy(out.data() + sizeof(kWeightMagic), &len, 4);
  std::memcpy(out.data() + kHeader, text.data(), text.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& e = a.entries[i];
    std::memcpy(out.data() + blob_start + offsets[i], e.value.data().data(),
                static_cast<std::size_t>(e.value.numel()) * sizeof(float));
  }
  return out;
}

WeightArchive decode_archive(std::span<const uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < kHeader) {
    if (bytes.size() >= 6 && std::memcmp(bytes.data(), kWeightMagic, 6) != 0) {
      fail(WeightErrorKind::kBadMagic, origin + ": not an LWAW weight file");
    }
    fail(WeightErrorKind::kTruncated, origin + ": truncated header (" +
                                          std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kWeightMagic, 6) != 0) {
    fail(WeightErrorKind::kBadMagic, origin + ": not an LWAW weight file (bad magic)");
  }
  if (std::memcmp(bytes.data() + 6, kWeightMagic + 6, 2) != 0) {
    fail(WeightErrorKind::kVersionMismatch,
         origin + ": unsupported LWAW version '" +
             std::string(reinterpret_cast<const char*>(bytes.data()) + 6, 2) + "', expected '01'");
  }
  uint32_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof(kWeightMagic), 4);
  if (kHeader + len > bytes.size()) {
    fail(WeightErrorKind::kTruncated, origin + ": truncated manifest");
  }
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(bytes.begin() + kHeader, bytes.begin() + kHeader + len);
  } catch (const nlohmann::json::exception& e) {
    fail(WeightErrorKind::kCorrupt, origin + ": manifest is not valid JSON: " + e.what());
  }
  if (manifest.value("format", "") != "LWAW") {
    fail(WeightErrorKind::kCorrupt, origin + ": manifest format is not LWAW");
  }
  if (manifest.value("version", -1) != kWeightVersion) {
    fail(WeightErrorKind::kVersionMismatch,
         origin + ": manifest version " + manifest.value("version", nlohmann::ordered_json()).dump() +
             ", expected " + std::to_string(kWeightVersion));
  }

  WeightArchive a;
  a.config = manifest.value("config", nlohmann::ordered_json());
  if (manifest.contains("extra")) a.extra = manifest["extra"];
  const std::size_t blob_start = align_up(kHeader + len);
  try {
    for (const auto& m : manifest.at("entries")) {
      ArchiveEntry e;
      e.name = m.at("name").get<std::string>();
      e.kind = m.at("kind").get<std::string>();
      if (m.at("dtype").get<std::string>() != "f32") {
        fail(WeightErrorKind::kCorrupt, origin + ": tensor " + e.name + " has unsupported dtype");
      }
      const auto dims = m.at("shape").get<std::vector<int64_t>>();
      if (dims.size() != 4) fail(WeightErrorKind::kCorrupt, origin + ": tensor " + e.name + " is not 4-D");
      const Shape s{dims[0], dims[1], dims[2], dims[3]};
      const auto offset = m.at("offset").get<std::size_t>();
      const auto nbytes = m.at("nbytes").get<std::size_t>();
      if (nbytes != static_cast<std::size_t>(s.numel()) * sizeof(float)) {
        fail(WeightErrorKind::kCorrupt, origin + ": tensor " + e.name + " byte length disagrees with shape");
      }
      if (blob_start + offset + nbytes > bytes.size()) {
        fail(WeightErrorKind::kTruncated, origin + ": truncated data for tensor " + e.name);
      }
      std::vector<float> data(static_cast<std::size_t>(s.numel()));
      std::memcpy(data.data(), bytes.data() + blob_start + offset, nbytes);
      e.value = Tensor<float>(s, std::move(data));
      a.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(WeightErrorKind::kCorrupt, origin + ": malformed manifest entry: " + e.what());
  }
  return a;
}

void write_archive(const std::string& path, const WeightArchive& a) {
  const std::vector<uint8_t> bytes = encode_archive(a);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(WeightErrorKind::kIo, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(WeightErrorKind::kIo, "failed writing " + path);
}

WeightArchive read_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(WeightErrorKind::kIo, "cannot open " + path);
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_archive(bytes, path);
}

WeightArchive archive_from_store(const ParamStore<float>& store, nlohmann::ordered_json config) {
  WeightArchive a;
  a.config = std::move(config);
  for (const auto& e : store.entries()) {
    a.entries.push_back({e.decl.name, param_kind_tag(e.decl.kind), *e.value});
  }
  return a;
}

ParamStore<float> store_from_archive(const WeightArchive& a) {
  ParamStore<float> store;
  for (const auto& e : a.entries) {
    TensorDecl d;
    if (!parse_param_kind(e.kind, d.kind)) continue;
    d.name = e.name;
    d.shape = e.value.shape();
    store.add(d, e.value);
  }
  return store;
}

LoadReport load_into(ParamStore<float>& store, const WeightArchive& a, bool strict) {
  LoadReport r;
  std::set<std::string> known;
  for (const auto& e : store.entries()) {
    known.insert(e.decl.name);
    const ArchiveEntry* src = a.find(e.decl.name);
    if (src == nullptr) {
      r.missing.push_back(e.decl.name);
      continue;
    }
    if (!(src->value.shape() == e.decl.shape)) {
      fail(WeightErrorKind::kShapeMismatch, "tensor " + e.decl.name + ": file shape " +
                                                src->value.shape().str() + " vs model shape " +
                                                e.decl.shape.str());
    }
  }
  for (const auto& e : a.entries) {
    ParamKind k;
    if (parse_param_kind(e.kind, k) && known.count(e.name) == 0) r.unexpected.push_back(e.name);
  }
  if (strict && !r.missing.empty()) {
    fail(WeightErrorKind::kMissingKey, "weight file lacks tensor " + r.missing.front() +
                                           (r.missing.size() > 1
                                                ? " (and " + std::to_string(r.missing.size() - 1) + " more)"
                                                : std::string()));
  }
  if (strict && !r.unexpected.empty()) {
    fail(WeightErrorKind::kUnexpectedKey, "weight file has tensor " + r.unexpected.front() +
                                              " unknown to the model");
  }
  for (const auto& e : store.entries()) {
    if (const ArchiveEntry* src = a.find(e.decl.name)) {
      *e.value = src->value;
      r.loaded.push_back(e.decl.name);
    }
  }
  return r;
}

void save_weights(const std::string& path, const Model<float>& model) {
  write_archive(path, archive_from_store(model.params(), model.config().to_json()));
}

ParamStore<float> load_weights(const std::string& path) { return store_from_archive(read_archive(path)); }

LoadReport load_weights(const std::string& path, Model<float>& model, bool strict) {
  return load_into(model.params(), read_archive(path), strict);
}

void import_pretrained_encoder(Model<float>& model, const std::string& path) {
  const WeightArchive a = read_archive(path);
  std::vector<std::pair<Tensor<float>*, const ArchiveEntry*>> plan;
  for (const auto& e : model.params().entries()) {
    if (!is_encoder_param(e.decl.name)) continue;
    const ArchiveEntry* src = a.find(e.decl.name);
    if (src == nullptr) {
      fail(WeightErrorKind::kMissingKey, path + ": encoder tensor " + e.decl.name + " missing");
    }
    if (!(src->value.shape() == e.decl.shape)) {
      fail(WeightErrorKind::kShapeMismatch, path + ": encoder tensor " + e.decl.name + " has shape " +
                                                src->value.shape().str() + ", model expects " +
                                                e.decl.shape.str());
    }
    plan.emplace_back(e.value.get(), src);
  }
  for (auto& [dst, src] : plan) *dst = src->value;
}

}  // namespace lwanet
