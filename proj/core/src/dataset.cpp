#include "crgrf/dataset.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "crgrf/error.hpp"
#include "format.hpp"

namespace crgrf {

namespace {

bool is_integral(double v) { return std::isfinite(v) && v == std::floor(v); }

}  // namespace

Dataset::Dataset(std::vector<ObservedRecord> records, std::vector<std::string> treatment_names,
                 std::vector<std::string> covariate_names, std::vector<bool> categorical_flags)
    : records_(std::move(records)),
      treatment_names_(std::move(treatment_names)),
      covariate_names_(std::move(covariate_names)),
      categorical_(std::move(categorical_flags)) {
  if (categorical_.empty()) categorical_.assign(covariate_names_.size(), false);
  if (categorical_.size() != covariate_names_.size()) {
    throw SchemaError("categorical flags do not match the number of covariates");
  }
  if (records_.empty()) throw SchemaError("dataset has no records");
  if (treatment_names_.empty()) throw SchemaError("dataset needs at least one treatment");

  const std::size_t k = treatment_names_.size();
  const std::size_t p = covariate_names_.size();
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    const std::size_t row = i + 1;
    if (!std::isfinite(r.time)) throw ValidationError(row, "time is not a finite number");
    if (r.time < 0.0) throw ValidationError(row, "negative time");
    if (r.status < 0 || r.status > 2) throw ValidationError(row, "status outside {0,1,2}");
    if (r.treatments.size() != k) throw ValidationError(row, "wrong number of treatments");
    for (auto a : r.treatments) {
      if (a > 1) throw ValidationError(row, "treatment outside {0,1}");
    }
    if (r.covariates.size() != p) throw ValidationError(row, "wrong number of covariates");
    for (std::size_t j = 0; j < p; ++j) {
      if (!std::isfinite(r.covariates[j])) {
        throw ValidationError(row, "missing or non-finite covariate " + covariate_names_[j]);
      }
      if (categorical_[j] && !is_integral(r.covariates[j])) {
        throw ValidationError(row, "categorical covariate " + covariate_names_[j] +
                                       " is not integer-valued");
      }
    }
  }
}

std::optional<std::size_t> Dataset::treatment_index(std::string_view name) const {
  auto it = std::find(treatment_names_.begin(), treatment_names_.end(), name);
  if (it == treatment_names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - treatment_names_.begin());
}

std::optional<std::size_t> Dataset::covariate_index(std::string_view name) const {
  auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
  if (it == covariate_names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - covariate_names_.begin());
}

bool Dataset::is_degenerate(std::size_t treatment) const {
  const auto first = records_.front().treatments.at(treatment);
  return std::all_of(records_.begin(), records_.end(),
                     [&](const ObservedRecord& r) { return r.treatments[treatment] == first; });
}

std::array<std::size_t, 3> Dataset::event_counts() const {
  std::array<std::size_t, 3> counts{};
  for (const auto& r : records_) ++counts[static_cast<std::size_t>(r.status)];
  return counts;
}

std::vector<double> Dataset::times() const {
  std::vector<double> out(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) out[i] = records_[i].time;
  return out;
}

std::vector<int> Dataset::statuses() const {
  std::vector<int> out(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) out[i] = records_[i].status;
  return out;
}

std::vector<double> Dataset::treatment_column(std::size_t k) const {
  std::vector<double> out(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) out[i] = records_[i].treatments.at(k);
  return out;
}

std::vector<double> Dataset::covariate_column(std::size_t j) const {
  std::vector<double> out(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) out[i] = records_[i].covariates.at(j);
  return out;
}

Dataset Dataset::permuted(const std::vector<std::size_t>& order) const {
  std::vector<ObservedRecord> rows;
  rows.reserve(order.size());
  for (auto i : order) rows.push_back(records_.at(i));
  return Dataset(std::move(rows), treatment_names_, covariate_names_, categorical_);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

double parse_number(const std::string& cell, std::size_t row, const std::string& column) {
  if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") {
    throw ValidationError(row, "missing value in column " + column);
  }
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0' || errno == ERANGE) {
    throw ValidationError(row, "non-numeric value '" + cell + "' in column " + column);
  }
  if (!std::isfinite(v)) throw ValidationError(row, "non-finite value in column " + column);
  return v;
}

}  // namespace

Dataset read_csv(std::istream& in, const CsvSchema& schema) {
  if (schema.time_col.empty()) throw SchemaError("schema needs a time column");
  if (schema.status_col.empty()) throw SchemaError("schema needs a status column");
  if (schema.treatment_cols.empty()) throw SchemaError("schema needs at least one treatment column");
  for (const auto& c : schema.categorical_cols) {
    if (std::find(schema.covariate_cols.begin(), schema.covariate_cols.end(), c) ==
        schema.covariate_cols.end()) {
      throw SchemaError("categorical column " + c + " is not listed as a covariate");
    }
  }

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("CSV input is empty");
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < header.size(); ++i) pos.emplace(header[i], i);
  auto column = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) throw SchemaError("missing column '" + name + "'");
    return it->second;
  };

  const std::optional<std::size_t> id_pos =
      schema.id_col.empty() ? std::nullopt : std::optional<std::size_t>(column(schema.id_col));
  const auto time_pos = column(schema.time_col);
  const auto status_pos = column(schema.status_col);
  std::vector<std::size_t> treat_pos, cov_pos;
  for (const auto& c : schema.treatment_cols) treat_pos.push_back(column(c));
  for (const auto& c : schema.covariate_cols) cov_pos.push_back(column(c));

  std::vector<ObservedRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ValidationError(row, "expected " + std::to_string(header.size()) + " fields, got " +
                                     std::to_string(cells.size()));
    }
    ObservedRecord r;
    r.id = id_pos ? cells[*id_pos] : std::to_string(row);
    r.time = parse_number(cells[time_pos], row, schema.time_col);
    if (r.time < 0.0) throw ValidationError(row, "negative time");
    const double status = parse_number(cells[status_pos], row, schema.status_col);
    if (status != 0.0 && status != 1.0 && status != 2.0) {
      throw ValidationError(row, "status outside {0,1,2}");
    }
    r.status = static_cast<int>(status);
    for (std::size_t k = 0; k < treat_pos.size(); ++k) {
      const double a = parse_number(cells[treat_pos[k]], row, schema.treatment_cols[k]);
      if (a != 0.0 && a != 1.0) {
        throw ValidationError(row, "treatment " + schema.treatment_cols[k] + " outside {0,1}");
      }
      r.treatments.push_back(static_cast<std::uint8_t>(a));
    }
    for (std::size_t j = 0; j < cov_pos.size(); ++j) {
      r.covariates.push_back(parse_number(cells[cov_pos[j]], row, schema.covariate_cols[j]));
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw SchemaError("CSV input has no data rows");

  std::vector<bool> categorical(schema.covariate_cols.size(), false);
  for (std::size_t j = 0; j < schema.covariate_cols.size(); ++j) {
    categorical[j] = std::find(schema.categorical_cols.begin(), schema.categorical_cols.end(),
                               schema.covariate_cols[j]) != schema.categorical_cols.end();
  }
  return Dataset(std::move(records), schema.treatment_cols, schema.covariate_cols,
                 std::move(categorical));
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path);
  return read_csv(in, schema);
}

void write_csv(std::ostream& out, const Dataset& data) {
  out << "id,time,status";
  for (const auto& t : data.treatment_names()) out << ',' << t;
  for (const auto& c : data.covariate_names()) out << ',' << c;
  out << '\n';
  for (const auto& r : data.records()) {
    out << r.id << ',' << detail::exact(r.time) << ',' << r.status;
    for (auto a : r.treatments) out << ',' << static_cast<int>(a);
    for (double x : r.covariates) out << ',' << detail::exact(x);
    out << '\n';
  }
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write " + path);
  write_csv(out, data);
}

CsvSchema schema_of(const Dataset& data) {
  CsvSchema s;
  s.id_col = "id";
  s.time_col = "time";
  s.status_col = "status";
  s.treatment_cols = data.treatment_names();
  s.covariate_cols = data.covariate_names();
  for (std::size_t j = 0; j < data.num_covariates(); ++j) {
    if (data.is_categorical(j)) s.categorical_cols.push_back(data.covariate_names()[j]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration and strata

std::string_view to_string(Scale scale) {
  switch (scale) {
    case Scale::kCrude: return "crude";
    case Scale::kNet: return "net";
    case Scale::kBoth: return "both";
  }
  return "?";
}

Scale parse_scale(std::string_view text) {
  if (text == "crude") return Scale::kCrude;
  if (text == "net") return Scale::kNet;
  if (text == "both") return Scale::kBoth;
  throw ConfigError("unknown scale '" + std::string(text) + "' (expected crude, net or both)");
}

void AnalysisConfig::validate() const {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive");
  if (trees == 0) throw ConfigError("trees must be positive");
  if (min_node_size == 0) throw ConfigError("min_node_size must be positive");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("subsample_fraction must lie in (0, 1]");
  }
  if (group_size > 1 && subsample_fraction > 0.5) {
    throw ConfigError("subsample_fraction must not exceed 0.5 when trees are grouped in groves");
  }
  if (!(weight_floor > 0.0 && weight_floor < 0.5)) {
    throw ConfigError("weight_floor must lie in (0, 0.5)");
  }
  if (group_size == 0) throw ConfigError("group_size must be positive");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie in (0, 1)");
}

StrataSpec resolve_strata(const Dataset& data, const std::vector<std::string>& names,
                          std::optional<std::size_t> current_treatment) {
  StrataSpec spec;
  auto add_treatment = [&](std::size_t k) {
    if (std::find(spec.treatments.begin(), spec.treatments.end(), k) == spec.treatments.end()) {
      spec.treatments.push_back(k);
    }
  };
  for (const auto& name : names) {
    if (name == kCurrentTreatment) {
      if (!current_treatment) {
        throw ConfigError("strata refer to the current treatment but none is selected");
      }
      add_treatment(*current_treatment);
    } else if (auto k = data.treatment_index(name)) {
      add_treatment(*k);
    } else if (auto j = data.covariate_index(name)) {
      if (!data.is_categorical(*j)) {
        throw ConfigError("strata column '" + name +
                          "' is continuous; supply a categorical (binned) column instead");
      }
      if (std::find(spec.covariates.begin(), spec.covariates.end(), *j) == spec.covariates.end()) {
        spec.covariates.push_back(*j);
      }
    } else {
      throw ConfigError("unknown strata column '" + name + "'");
    }
  }
  return spec;
}

std::string to_string(const StratumKey& key) {
  if (key.values.empty()) return "all";
  std::string s;
  for (std::size_t i = 0; i < key.values.size(); ++i) {
    if (i) s += '|';
    s += std::to_string(key.values[i]);
  }
  return s;
}

StratumKey stratum_key(const ObservedRecord& record, const StrataSpec& strata) {
  StratumKey key;
  key.values.reserve(strata.treatments.size() + strata.covariates.size());
  for (auto k : strata.treatments) key.values.push_back(record.treatments.at(k));
  for (auto j : strata.covariates) key.values.push_back(std::llround(record.covariates.at(j)));
  return key;
}

std::map<StratumKey, std::vector<std::size_t>> stratify(const Dataset& data,
                                                        const StrataSpec& strata) {
  std::map<StratumKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    groups[stratum_key(data[i], strata)].push_back(i);
  }
  return groups;
}

}  // namespace crgrf
