#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "error.hpp"

namespace zresid {

struct SurvivalRecord {
  double time = 0.0;
  int status = 0;  // 1 = event, 0 = right-censored
  std::string cluster;
  std::vector<double> covariates;
};

/// Clustered right-censored sample. Cluster labels keep their original text;
/// clusters are also numbered 0..g-1 in order of first appearance.
class SurvivalDataset {
 public:
  SurvivalDataset() = default;

  SurvivalDataset(std::vector<SurvivalRecord> records, std::vector<std::string> covariate_names)
      : records_(std::move(records)), covariate_names_(std::move(covariate_names)) {
    if (records_.empty()) throw validation_error("dataset has no records");
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (!std::isfinite(r.time) || r.time <= 0.0)
        throw validation_error("record " + std::to_string(i + 1) + ": time must be positive and finite");
      if (r.status != 0 && r.status != 1)
        throw validation_error("record " + std::to_string(i + 1) + ": status must be 0 or 1");
      if (r.covariates.size() != covariate_names_.size())
        throw validation_error("record " + std::to_string(i + 1) + ": expected " +
                               std::to_string(covariate_names_.size()) + " covariates, got " +
                               std::to_string(r.covariates.size()));
      for (double v : r.covariates)
        if (!std::isfinite(v))
          throw validation_error("record " + std::to_string(i + 1) + ": non-finite covariate value");
      auto [it, inserted] = label_to_index_.try_emplace(r.cluster, cluster_labels_.size());
      if (inserted) {
        cluster_labels_.push_back(r.cluster);
        cluster_sizes_.push_back(0);
      }
      cluster_index_.push_back(it->second);
      ++cluster_sizes_[it->second];
      events_ += r.status;
    }
    if (events_ == 0) throw validation_error("dataset has no events (all records censored)");
  }

  std::size_t size() const { return records_.size(); }
  const std::vector<SurvivalRecord>& records() const { return records_; }
  const SurvivalRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  std::size_t cluster_count() const { return cluster_labels_.size(); }
  const std::vector<std::string>& cluster_labels() const { return cluster_labels_; }
  const std::vector<std::size_t>& cluster_sizes() const { return cluster_sizes_; }
  std::size_t cluster_of(std::size_t record) const { return cluster_index_[record]; }
  std::optional<std::size_t> find_cluster(const std::string& label) const {
    auto it = label_to_index_.find(label);
    if (it == label_to_index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t event_count() const { return events_; }
  double censoring_rate() const {
    return static_cast<double>(size() - events_) / static_cast<double>(size());
  }

  std::optional<std::size_t> covariate_column(std::string_view name) const {
    auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
    if (it == covariate_names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - covariate_names_.begin());
  }

  std::vector<double> covariate_values(std::size_t column) const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& r : records_) out.push_back(r.covariates[column]);
    return out;
  }

 private:
  std::vector<SurvivalRecord> records_;
  std::vector<std::string> covariate_names_;
  std::vector<std::string> cluster_labels_;
  std::vector<std::size_t> cluster_sizes_;
  std::vector<std::size_t> cluster_index_;
  std::map<std::string, std::size_t> label_to_index_;
  std::size_t events_ = 0;
};

/// Column mapping used to read a dataset from a delimited file.
struct CsvSchema {
  std::string time = "time";
  std::string status = "status";
  std::string cluster = "cluster";
  std::vector<std::string> covariates;
};

struct CovariateSummary {
  std::string name;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct DatasetSummary {
  std::size_t records = 0;
  std::size_t clusters = 0;
  std::vector<std::size_t> cluster_sizes;
  std::size_t events = 0;
  double censoring_rate = 0.0;
  std::vector<CovariateSummary> covariates;
};

inline DatasetSummary summarize(const SurvivalDataset& data) {
  DatasetSummary s;
  s.records = data.size();
  s.clusters = data.cluster_count();
  s.cluster_sizes = data.cluster_sizes();
  s.events = data.event_count();
  s.censoring_rate = data.censoring_rate();
  for (std::size_t c = 0; c < data.covariate_names().size(); ++c) {
    CovariateSummary cs{data.covariate_names()[c], data[0].covariates[c], data[0].covariates[c], 0.0};
    for (const auto& r : data.records()) {
      cs.min = std::min(cs.min, r.covariates[c]);
      cs.max = std::max(cs.max, r.covariates[c]);
      cs.mean += r.covariates[c];
    }
    cs.mean /= static_cast<double>(data.size());
    s.covariates.push_back(cs);
  }
  return s;
}

// ---- delimited text helpers ------------------------------------------------

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// Splits one CSV line; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline SurvivalDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw validation_error("'" + path + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = csv_split(line);

  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw validation_error("'" + path + "': missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t time_col = column(schema.time);
  const std::size_t status_col = column(schema.status);
  const std::size_t cluster_col = column(schema.cluster);
  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariates) cov_cols.push_back(column(c));

  std::vector<SurvivalRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = csv_split(line);
    const std::string where = "'" + path + "' line " + std::to_string(line_no) + ": ";
    if (fields.size() != header.size())
      throw validation_error(where + "expected " + std::to_string(header.size()) + " fields, got " +
                             std::to_string(fields.size()));
    SurvivalRecord r;
    auto t = parse_double(fields[time_col]);
    if (!t || !std::isfinite(*t)) throw validation_error(where + "time '" + fields[time_col] + "' is not numeric");
    if (*t <= 0.0) throw validation_error(where + "time must be positive, got " + fields[time_col]);
    r.time = *t;
    if (fields[status_col] == "0") {
      r.status = 0;
    } else if (fields[status_col] == "1") {
      r.status = 1;
    } else {
      throw validation_error(where + "status must be 0 or 1, got '" + fields[status_col] + "'");
    }
    r.cluster = fields[cluster_col];
    if (r.cluster.empty()) throw validation_error(where + "missing cluster label");
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      auto v = parse_double(fields[cov_cols[k]]);
      if (!v || !std::isfinite(*v))
        throw validation_error(where + "covariate '" + schema.covariates[k] + "' value '" +
                               fields[cov_cols[k]] + "' is not numeric");
      r.covariates.push_back(*v);
    }
    records.push_back(std::move(r));
  }
  return SurvivalDataset(std::move(records), schema.covariates);
}

inline void save_csv(const SurvivalDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot write '" + path + "'");
  out << "time,status,cluster";
  for (const auto& n : data.covariate_names()) out << ',' << csv_quote(n);
  out << '\n';
  for (const auto& r : data.records()) {
    out << format_double(r.time) << ',' << r.status << ',' << csv_quote(r.cluster);
    for (double v : r.covariates) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw validation_error("I/O error while writing '" + path + "'");
}

}  // namespace zresid
