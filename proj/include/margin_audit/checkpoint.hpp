#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "margin_audit/model.hpp"
#include "margin_audit/provenance.hpp"

namespace margin_audit {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// On-disk layout, little-endian:
//   "MAUDITCK"  8-byte magic
//   u32         format version
//   u32         header length, then that many bytes of JSON header
//   u64         payload count, then that many f64 values
//   u32         CRC-32 of every preceding byte
struct CheckpointContainer {
  nlohmann::json header = nlohmann::json::object();
  std::vector<double> payload;
};

void write_container(const std::filesystem::path& path, const CheckpointContainer& container,
                     std::uint32_t version = kCheckpointVersion);
CheckpointContainer read_container(const std::filesystem::path& path);

nlohmann::json spec_to_json(const FeatureExtractorSpec& spec);
FeatureExtractorSpec spec_from_json(const nlohmann::json& j);

void save_checkpoint(const Classifier& classifier, const std::filesystem::path& path,
                     const Provenance& provenance = {});
Classifier load_checkpoint(const std::filesystem::path& path);

}  // namespace margin_audit
