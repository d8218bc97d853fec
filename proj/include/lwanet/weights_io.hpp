#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwanet/network.hpp"

// LWAW v1 weight container:
//   "LWAWGT01" | u32 LE manifest length | UTF-8 JSON manifest | blobs
// Blobs are raw little-endian float32, each starting on a 64-byte boundary
// of the file. Manifest offsets are relative to the first blob.
namespace lwanet {

enum class WeightErrorKind {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kCorrupt,
  kShapeMismatch,
  kMissingKey,
  kUnexpectedKey,
};

const char* to_string(WeightErrorKind kind);

class WeightFileError : public std::runtime_error {
 public:
  WeightFileError(WeightErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  WeightErrorKind kind() const { return kind_; }

 private:
  WeightErrorKind kind_;
};

struct ArchiveEntry {
  std::string name;
  std::string kind;  // parameter kind, or a free tag such as "adam_m"
  Tensor<float> value;
};

struct WeightArchive {
  nlohmann::ordered_json config;  // echo of the producing configuration
  nlohmann::ordered_json extra;   // free-form state (training counters etc.)
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(const std::string& name) const;
};

inline constexpr char kWeightMagic[8] = {'L', 'W', 'A', 'W', 'G', 'T', '0', '1'};
inline constexpr int kWeightVersion = 1;

std::vector<uint8_t> encode_archive(const WeightArchive& a);
/// `origin` names the source in diagnostics.
WeightArchive decode_archive(std::span<const uint8_t> bytes, const std::string& origin);
void write_archive(const std::string& path, const WeightArchive& a);
WeightArchive read_archive(const std::string& path);

const char* param_kind_tag(ParamKind kind);
bool parse_param_kind(const std::string& tag, ParamKind& out);

WeightArchive archive_from_store(const ParamStore<float>& store, nlohmann::ordered_json config);
/// Rebuilds a store from every parameter-kind entry of the archive.
ParamStore<float> store_from_archive(const WeightArchive& a);

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // left at their current values
  std::vector<std::string> unexpected;  // present in the file, unknown to the model
};

/// Copies archive tensors into `store`. Strict loading requires the
/// parameter name sets to match exactly; non-strict loading keeps the
/// current value of absent tensors. Shape mismatches always fail.
LoadReport load_into(ParamStore<float>& store, const WeightArchive& a, bool strict);

void save_weights(const std::string& path, const Model<float>& model);
ParamStore<float> load_weights(const std::string& path);
LoadReport load_weights(const std::string& path, Model<float>& model, bool strict = true);

/// Replaces every encoder tensor from the file. Any missing or mis-shaped
/// encoder tensor rejects the whole import, leaving the model untouched.
void import_pretrained_encoder(Model<float>& model, const std::string& path);

}  // namespace lwanet
