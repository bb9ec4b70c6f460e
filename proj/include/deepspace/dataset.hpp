#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepspace/geocell.hpp"
#include "deepspace/neuralcore.hpp"
#include "deepspace/schema.hpp"

namespace deepspace::data {

struct DatetimeParts {
  int day_of_month = 1;  // 1..31
  int day_of_week = 1;   // ISO: Monday = 1 .. Sunday = 7
  int hour = 0;          // 0..23
  int month = 1;         // 1..12

  int get(DatetimeField field) const;
};

/// Parses "YYYY-MM-DD[T| ]HH:MM[:SS[.fff]]" (an optional trailing 'Z' is ignored) and derives the
/// discrete fields. Throws ParseError for malformed input or an invalid Gregorian date.
DatetimeParts derive_datetime(std::string_view timestamp);

/// z-score parameters of one continuous attribute. For lognormal heads the statistics describe
/// log(value) and standardization applies the log first.
struct ContinuousStats {
  double mean = 0.0;
  double stddev = 1.0;
  bool log_transform = false;

  double transform(double raw) const;
  double standardize(double raw) const;
  /// Maps a standardized value back to the (possibly log-) transformed space.
  double unstandardize(double z) const { return z * stddev + mean; }
};

struct DropReport {
  std::size_t parse_errors = 0;
  std::size_t out_of_domain = 0;
  std::size_t unknown_category = 0;
  std::size_t invalid_value = 0;

  std::size_t total() const { return parse_errors + out_of_domain + unknown_category + invalid_value; }
};

/// One validated row: discrete codes (-1 where not discrete), the level-L cell, the raw location and
/// raw continuous values (NaN where not continuous). All vectors are indexed by attribute.
struct RawRow {
  std::vector<int> codes;
  geo::Cell cell;
  geo::GeoPoint location;
  std::vector<double> values;
};

/// Validated rows stored column-wise, plus the raw side-table used by exact scans.
class EncodedDataset {
 public:
  EncodedDataset() = default;
  explicit EncodedDataset(AttributeSchema schema);

  void append(const RawRow& row);
  /// Computes z-score statistics for every continuous attribute from the current rows.
  void compute_stats();

  const AttributeSchema& schema() const { return schema_; }
  std::size_t size() const { return geo_.size(); }
  int code(std::size_t row, std::size_t attribute) const { return codes_[attribute][row]; }
  /// Curve index of the row's cell at the schema's geo level L.
  std::uint64_t geo_index(std::size_t row) const { return geo_[row]; }
  geo::Cell cell(std::size_t row, int level) const;
  const geo::GeoPoint& location(std::size_t row) const { return locations_[row]; }
  double value(std::size_t row, std::size_t attribute) const { return values_[attribute][row]; }
  RawRow row(std::size_t row) const;

  const std::vector<ContinuousStats>& stats() const { return stats_; }
  void set_stats(std::vector<ContinuousStats> stats) { stats_ = std::move(stats); }

  DropReport drops;

 private:
  AttributeSchema schema_;
  std::vector<std::vector<std::uint16_t>> codes_;
  std::vector<std::uint64_t> geo_;
  std::vector<geo::GeoPoint> locations_;
  std::vector<std::vector<double>> values_;
  std::vector<ContinuousStats> stats_;
};

/// Reads one RFC 4180 record. Returns false at end of input.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields);

/// Loads a CSV (header row required) through the schema's column mapping. Rows that fail to parse,
/// fall outside the domain, carry an unknown category or an invalid continuous value are dropped
/// and counted in `drops`. Statistics are computed on the loaded rows.
/// Throws ConfigError for a missing column and DataError when no row survives.
EncodedDataset load_csv(std::istream& in, const AttributeSchema& schema);
EncodedDataset load_csv(const std::string& path, const AttributeSchema& schema);

/// Model input vector in canonical attribute order: one-hot(K) per discrete attribute, L
/// one-hot(4) blocks for geo (coarse to fine) and a standardized scalar per continuous attribute.
/// `stats` is indexed by attribute.
nn::Vector encode_row(const RawRow& row, const AttributeSchema& schema, std::span<const ContinuousStats> stats);

}  // namespace deepspace::data
