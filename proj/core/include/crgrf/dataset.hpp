#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace crgrf {

// Event codes of the observed status column.
enum EventCode : int { kCensored = 0, kEventOfInterest = 1, kCompetingEvent = 2 };

struct ObservedRecord {
  std::string id;
  double time = 0.0;
  int status = kCensored;
  std::vector<std::uint8_t> treatments;
  std::vector<double> covariates;
};

/// Validated, immutable collection of right-censored competing-risks records
/// with K binary treatments and p covariates.
///
/// Construction checks every row; the first offending row raises a
/// ValidationError carrying its 1-based index. Nothing is dropped silently.
class Dataset {
 public:
  Dataset(std::vector<ObservedRecord> records, std::vector<std::string> treatment_names,
          std::vector<std::string> covariate_names, std::vector<bool> categorical_flags);

  std::size_t size() const noexcept { return records_.size(); }
  std::size_t num_treatments() const noexcept { return treatment_names_.size(); }
  std::size_t num_covariates() const noexcept { return covariate_names_.size(); }

  const std::vector<ObservedRecord>& records() const noexcept { return records_; }
  const ObservedRecord& operator[](std::size_t i) const { return records_[i]; }

  const std::vector<std::string>& treatment_names() const noexcept { return treatment_names_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  const std::vector<bool>& categorical_flags() const noexcept { return categorical_; }
  bool is_categorical(std::size_t covariate) const { return categorical_.at(covariate); }

  std::optional<std::size_t> treatment_index(std::string_view name) const;
  std::optional<std::size_t> covariate_index(std::string_view name) const;

  // A treatment column holding a single value cannot be contrasted.
  bool is_degenerate(std::size_t treatment) const;

  // Counts indexed by event code 0, 1, 2.
  std::array<std::size_t, 3> event_counts() const;

  std::vector<double> times() const;
  std::vector<int> statuses() const;
  std::vector<double> treatment_column(std::size_t k) const;
  std::vector<double> covariate_column(std::size_t j) const;

  // Same records with rows reordered: result[i] = (*this)[order[i]].
  Dataset permuted(const std::vector<std::size_t>& order) const;

 private:
  std::vector<ObservedRecord> records_;
  std::vector<std::string> treatment_names_;
  std::vector<std::string> covariate_names_;
  std::vector<bool> categorical_;
};

// Column roles for CSV input. An empty id column means ids are row numbers.
struct CsvSchema {
  std::string id_col;
  std::string time_col;
  std::string status_col;
  std::vector<std::string> treatment_cols;
  std::vector<std::string> covariate_cols;
  std::vector<std::string> categorical_cols;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);
Dataset read_csv(std::istream& in, const CsvSchema& schema);

// Writes id,time,status,<treatments>,<covariates> with round-trip precision.
void write_csv(std::ostream& out, const Dataset& data);
void write_csv(const std::string& path, const Dataset& data);

// Schema that reads back what write_csv produced.
CsvSchema schema_of(const Dataset& data);

enum class Scale { kCrude, kNet, kBoth };

std::string_view to_string(Scale scale);
Scale parse_scale(std::string_view text);

// Placeholder in strata lists for the treatment currently analysed.
inline constexpr std::string_view kCurrentTreatment = "@treatment";

struct AnalysisConfig {
  double horizon = 0.0;
  std::vector<std::string> strata_columns{std::string(kCurrentTreatment)};
  Scale scale = Scale::kNet;
  std::size_t trees = 200;
  std::uint64_t seed = 42;
  std::size_t min_node_size = 5;
  double subsample_fraction = 0.5;
  bool honesty = true;
  double weight_floor = 0.01;
  // Trees per half-sample grove; the variance needs at least two groves.
  std::size_t group_size = 4;
  // 0 selects ceil(sqrt(number of forest covariates)).
  std::size_t mtry = 0;
  // Covariates that may define strata but are not offered to the forest.
  std::vector<std::string> forest_exclude;
  // 0 uses all hardware threads.
  unsigned threads = 0;
  double ci_level = 0.95;

  void validate() const;
};

// Resolved strata definition: which treatment and covariate columns form Z.
struct StrataSpec {
  std::vector<std::size_t> treatments;
  std::vector<std::size_t> covariates;

  bool empty() const noexcept { return treatments.empty() && covariates.empty(); }
};

// Resolves names (including kCurrentTreatment) against the dataset. Continuous
// covariates are rejected with ConfigError; they must be binned upstream.
StrataSpec resolve_strata(const Dataset& data, const std::vector<std::string>& names,
                          std::optional<std::size_t> current_treatment);

struct StratumKey {
  std::vector<std::int64_t> values;

  auto operator<=>(const StratumKey&) const = default;
  bool operator==(const StratumKey&) const = default;
};

std::string to_string(const StratumKey& key);

StratumKey stratum_key(const ObservedRecord& record, const StrataSpec& strata);

// Partition of row indices by stratum; rows keep dataset order within a stratum.
std::map<StratumKey, std::vector<std::size_t>> stratify(const Dataset& data,
                                                        const StrataSpec& strata);

}  // namespace crgrf
