#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace survtrace {

// ---- schema & records -----------------------------------------------------

enum class FieldKind { numerical, categorical };

struct FieldDescriptor {
  std::string name;
  FieldKind kind = FieldKind::numerical;

  // numerical: imputation value and standardization statistics
  double mean = 0.0;
  double stddev = 1.0;

  // categorical: index -> value; index vocabulary.size() is "unknown"
  std::vector<std::string> vocabulary;
  std::size_t mode = 0;

  std::size_t cardinality() const { return vocabulary.size(); }
  std::size_t unknown_index() const { return vocabulary.size(); }
  // Vocabulary index of `value`, or unknown_index() when unseen.
  std::size_t lookup(const std::string& value) const;
  double standardize(double raw) const { return (raw - mean) / stddev; }
};

// Fitted description of the covariates. Fields keep file order; the model
// consumes categorical fields first, then numerical ones.
class CovariateSchema {
 public:
  CovariateSchema() = default;
  explicit CovariateSchema(std::vector<FieldDescriptor> fields);

  const std::vector<FieldDescriptor>& fields() const { return fields_; }
  std::size_t size() const { return fields_.size(); }
  std::size_t categorical_count() const { return categorical_.size(); }
  std::size_t numerical_count() const { return numerical_.size(); }

  // Indices into fields(), in record order.
  const std::vector<std::size_t>& categorical_fields() const { return categorical_; }
  const std::vector<std::size_t>& numerical_fields() const { return numerical_; }
  const FieldDescriptor& categorical(std::size_t i) const { return fields_[categorical_[i]]; }
  const FieldDescriptor& numerical(std::size_t i) const { return fields_[numerical_[i]]; }

  // Field names in embedding order (categorical, then numerical).
  std::vector<std::string> embedding_labels() const;

  // Width of the flattened covariate vector used by the propensity model:
  // numerical values followed by one-hot slots (cardinality + 1) per categorical field.
  std::size_t flat_width() const;

 private:
  std::vector<FieldDescriptor> fields_;
  std::vector<std::size_t> categorical_;
  std::vector<std::size_t> numerical_;
};

struct SurvivalRecord {
  std::vector<double> numerical;         // standardized, schema numerical order
  std::vector<std::size_t> categorical;  // vocabulary indices, schema categorical order
  double duration = 0.0;
  int event = 0;  // 0 = right-censored, 1..K_E = observed event type
};

struct Dataset {
  CovariateSchema schema;
  std::vector<SurvivalRecord> records;
  int num_events = 1;

  std::size_t size() const { return records.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

// Throws DataError unless the record matches the schema and has valid labels.
void validate_record(const CovariateSchema& schema, const SurvivalRecord& record, int num_events);

// numerical values followed by one-hot categorical slots.
std::vector<double> flatten_covariates(const CovariateSchema& schema, const SurvivalRecord& record);

// ---- CSV ingestion --------------------------------------------------------

struct SchemaDeclaration {
  std::string duration_column = "duration";
  std::string event_column = "event";
  // When set, exactly these columns are categorical; otherwise inferred.
  std::optional<std::vector<std::string>> categorical;
  // Columns ignored entirely.
  std::vector<std::string> ignore;
  // Inference: integer-valued columns with at most this many distinct values
  // are treated as categorical.
  std::size_t max_inferred_levels = 8;
};

struct RawRow {
  std::vector<std::string> cells;  // covariate cells, "" = missing
  double duration = 0.0;
  int event = 0;
  std::size_t line = 0;
};

struct RawTable {
  std::vector<std::string> names;
  std::vector<FieldKind> kinds;
  std::vector<RawRow> rows;
  int num_events = 1;
};

RawTable read_csv(const std::filesystem::path& path, const SchemaDeclaration& decl);
RawTable read_csv(std::istream& in, const SchemaDeclaration& decl);

// Fits imputation/standardization/vocabulary statistics on the given rows.
CovariateSchema fit_schema(const RawTable& table, std::span<const std::size_t> rows);
CovariateSchema fit_schema(const RawTable& table);

// Applies a fitted schema. Columns are matched by name, so the table may come
// from a different file than the one the schema was fitted on.
std::vector<SurvivalRecord> transform(const CovariateSchema& schema, const RawTable& table,
                                      std::span<const std::size_t> rows);
std::vector<SurvivalRecord> transform(const CovariateSchema& schema, const RawTable& table);

// read + fit on every row + transform.
Dataset load_csv(const std::filesystem::path& path, const SchemaDeclaration& decl);

// ---- time grid ------------------------------------------------------------

enum class GridScheme { quantile, uniform };

GridScheme parse_grid_scheme(const std::string& name);
std::string to_string(GridScheme scheme);

// Cut points 0 = τ_0 < τ_1 < ... < τ_m; intervals are (τ_{j-1}, τ_j].
class TimeGrid {
 public:
  struct Position {
    std::size_t bin = 0;     // 0-based interval index (κ(t) - 1)
    double proportion = 0;   // ρ(t)
    bool clamped = false;    // t was beyond τ_m
  };

  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> cuts);

  std::size_t bins() const { return cuts_.size(); }
  const std::vector<double>& cuts() const { return cuts_; }
  double horizon() const { return cuts_.back(); }
  double lower(std::size_t bin) const { return bin == 0 ? 0.0 : cuts_[bin - 1]; }
  double upper(std::size_t bin) const { return cuts_[bin]; }

  Position locate(double t) const;

 private:
  std::vector<double> cuts_;
};

struct KappaResult {
  std::size_t index = 1;  // 1..m
  bool clamped = false;
};

KappaResult kappa(const TimeGrid& grid, double t);
double rho(const TimeGrid& grid, double t);

TimeGrid build_time_grid(std::span<const double> durations, std::size_t m, GridScheme scheme);

// Linear-interpolation empirical quantile of unsorted data (q in [0, 1]).
double empirical_quantile(std::vector<double> values, double q);

// ---- splitting ------------------------------------------------------------

struct SplitFractions {
  double train = 0.6;
  double validation = 0.1;
  double test = 0.3;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

SplitIndices split(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

// ---- synthetic competing-risks data --------------------------------------

struct SyntheticSpec {
  std::size_t n = 1000;
  std::size_t numerical = 4;
  std::size_t categorical = 0;  // 3-level fields, levels "L0".."L2"
  int events = 2;
  // events × (numerical + categorical); categorical fields enter as (level - 1).
  std::vector<std::vector<double>> risk;
  // events × numerical; event label ~ softmax(assignment · x).
  std::vector<std::vector<double>> assignment;
  double base_rate = 0.1;
  double censoring_rate = 0.3;
  std::uint64_t seed = 0;

  // Informative coefficients with a fixed, readable pattern.
  static SyntheticSpec standard(std::size_t n, int events, std::uint64_t seed, std::size_t numerical = 4,
                                std::size_t categorical = 0);
};

struct SyntheticData {
  std::vector<std::string> numerical_names;
  std::vector<std::string> categorical_names;
  std::vector<std::vector<double>> numerical;         // n × numerical
  std::vector<std::vector<std::size_t>> categorical;  // n × categorical
  std::vector<double> durations;
  std::vector<int> events;
  std::vector<std::vector<double>> propensities;  // n × events, ground truth
  int num_events = 1;

  std::size_t size() const { return durations.size(); }
};

SyntheticData synthesize(const SyntheticSpec& spec);

// Dataset over the synthetic covariates with identity standardization.
Dataset to_dataset(const SyntheticData& data);

// Writes the CSV (covariates, duration, event) and the propensity sidecar.
void write_synthetic_csv(const SyntheticData& data, const std::filesystem::path& csv,
                         const std::filesystem::path& propensity_sidecar);

}  // namespace survtrace
