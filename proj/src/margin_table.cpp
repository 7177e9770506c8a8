#include "margin_audit/margin_table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace margin_audit {

std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_real(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw TableError("not a number: '" + s + "'");
  }
  return v;
}

std::string margin_csv(const std::vector<MarginRecord>& records, const Provenance& provenance) {
  std::ostringstream out;
  out << "# config_hash=" << provenance.config_hash << " master_seed=" << provenance.master_seed
      << '\n'
      << kMarginCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.id << ',' << r.label << ',' << r.pred << ',' << (r.correct ? 1 : 0) << ','
        << format_real(r.d_in_hat) << ',' << format_real(r.d_out) << ',' << format_real(r.d_feat)
        << ',' << format_real(r.feat_dist) << ',' << (r.adv_found ? 1 : 0) << '\n';
  }
  return out.str();
}

void write_margin_csv(const std::filesystem::path& path, const std::vector<MarginRecord>& records,
                      const Provenance& provenance) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TableError("cannot write " + path.string());
  f << margin_csv(records, provenance);
  if (!f) throw TableError("write failed for " + path.string());
}

namespace {

std::size_t parse_index(const std::string& s, std::size_t line) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw TableError("line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return v;
}

bool parse_flag(const std::string& s, std::size_t line) {
  if (s == "1") return true;
  if (s == "0") return false;
  throw TableError("line " + std::to_string(line) + ": bad flag '" + s + "'");
}

}  // namespace

MarginTable read_margin_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TableError("cannot read " + path.string());
  MarginTable table;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream in(line.substr(1));
      std::string tok;
      while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const auto key = tok.substr(0, eq);
        const auto value = tok.substr(eq + 1);
        if (key == "config_hash") table.provenance.config_hash = value;
        if (key == "master_seed") table.provenance.master_seed = std::stoull(value);
      }
      continue;
    }
    if (!header) {
      if (line != kMarginCsvHeader) throw TableError(path.string() + ": unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) {
      throw TableError("line " + std::to_string(lineno) + ": expected 9 columns, found " +
                       std::to_string(cells.size()));
    }
    MarginRecord r;
    try {
      r.id = parse_index(cells[0], lineno);
      r.label = parse_index(cells[1], lineno);
      r.pred = parse_index(cells[2], lineno);
      r.correct = parse_flag(cells[3], lineno);
      r.d_in_hat = parse_real(cells[4]);
      r.d_out = parse_real(cells[5]);
      r.d_feat = parse_real(cells[6]);
      r.feat_dist = parse_real(cells[7]);
      r.adv_found = parse_flag(cells[8], lineno);
    } catch (const TableError& e) {
      throw TableError(path.string() + ": " + e.what());
    }
    table.records.push_back(r);
  }
  if (!header) throw TableError(path.string() + ": missing header");
  return table;
}

nlohmann::json report_envelope(const std::string& kind, const Provenance& provenance) {
  return {{"kind", kind},
          {"config_hash", provenance.config_hash},
          {"master_seed", provenance.master_seed}};
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TableError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TableError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw TableError(path.string() + ": " + e.what());
  }
}

}  // namespace margin_audit

namespace margin_audit {

void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset,
                       const Provenance& provenance) {
  dataset.validate();
  std::string out = "# config_hash=" + provenance.config_hash +
                    " master_seed=" + std::to_string(provenance.master_seed) + "\n";
  out += "# classes=" + std::to_string(dataset.num_classes) + " bounds=";
  for (std::size_t j = 0; j < dataset.n_features; ++j) {
    out += (j ? ";" : "") + format_real(dataset.bounds[j].lo) + ":" + format_real(dataset.bounds[j].hi);
  }
  out += "\nlabel";
  for (std::size_t j = 0; j < dataset.n_features; ++j) out += ",x" + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out += std::to_string(dataset.labels[i]);
    for (double v : dataset.input(i)) out += "," + format_real(v);
    out += "\n";
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TableError("cannot write " + path.string());
  f << out;
  if (!f) throw TableError("write failed for " + path.string());
}

DatasetTable read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TableError("cannot read " + path.string());
  DatasetTable table;
  auto& d = table.dataset;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  const auto fail = [&](const std::string& what) {
    return TableError(path.string() + ": line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream in(line.substr(1));
      std::string tok;
      while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const auto key = tok.substr(0, eq);
        const auto value = tok.substr(eq + 1);
        if (key == "config_hash") table.provenance.config_hash = value;
        if (key == "master_seed") table.provenance.master_seed = std::stoull(value);
        if (key == "classes") d.num_classes = std::stoull(value);
        if (key == "bounds") {
          std::istringstream b(value);
          std::string pair;
          while (std::getline(b, pair, ';')) {
            const auto colon = pair.find(':');
            if (colon == std::string::npos) throw fail("malformed bounds");
            d.bounds.push_back({parse_real(pair.substr(0, colon)), parse_real(pair.substr(colon + 1))});
          }
        }
      }
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!header) {
      if (cells.empty() || cells[0] != "label") throw fail("expected a 'label,x0,...' header");
      d.n_features = cells.size() - 1;
      if (d.bounds.size() != d.n_features) throw fail("bounds do not match the column count");
      header = true;
      continue;
    }
    if (cells.size() != d.n_features + 1) throw fail("wrong column count");
    try {
      d.labels.push_back(parse_index(cells[0], lineno));
      for (std::size_t j = 1; j < cells.size(); ++j) d.inputs.push_back(parse_real(cells[j]));
    } catch (const TableError& e) {
      throw TableError(path.string() + ": " + e.what());
    }
  }
  if (!header) throw TableError(path.string() + ": missing header");
  try {
    d.validate();
  } catch (const DatasetError& e) {
    throw TableError(path.string() + ": " + e.what());
  }
  return table;
}

}  // namespace margin_audit
