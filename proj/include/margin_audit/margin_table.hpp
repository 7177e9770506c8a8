#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "margin_audit/dataset.hpp"
#include "margin_audit/margins.hpp"
#include "margin_audit/provenance.hpp"

namespace margin_audit {

class TableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kMarginCsvHeader =
    "id,label,pred,correct,d_in_hat,d_out,d_feat,feat_dist,adv_found";

// Shortest round-trip decimal form; "inf" for +inf.
std::string format_real(double v);
double parse_real(const std::string& s);

// CSV with a leading "# config_hash=<hex> master_seed=<n>" comment line.
std::string margin_csv(const std::vector<MarginRecord>& records, const Provenance& provenance);
void write_margin_csv(const std::filesystem::path& path, const std::vector<MarginRecord>& records,
                      const Provenance& provenance);

struct MarginTable {
  std::vector<MarginRecord> records;
  Provenance provenance;
};
MarginTable read_margin_csv(const std::filesystem::path& path);

// Dataset CSV: provenance comment, "# classes=K bounds=lo:hi;..." comment,
// then "label,x0,x1,..." rows.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset,
                       const Provenance& provenance);
struct DatasetTable {
  Dataset dataset;
  Provenance provenance;
};
DatasetTable read_dataset_csv(const std::filesystem::path& path);

// {"kind": kind, "config_hash": ..., "master_seed": ...} ready for payload fields.
nlohmann::json report_envelope(const std::string& kind, const Provenance& provenance);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace margin_audit
