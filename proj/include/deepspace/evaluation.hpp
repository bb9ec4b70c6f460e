#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "deepspace/dataset.hpp"
#include "deepspace/query.hpp"

namespace deepspace::eval {

/// max(e, t) / min(e, t) with e = max(estimate, 1). Throws ArgumentError for truth < 1.
double qerror(double estimate, double truth);

struct SmapeResult {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // (0, 0) pairs
};
/// Mean of |t - e| / ((t + e) / 2) over (truth, estimate) pairs.
SmapeResult smape(std::span<const std::pair<double, double>> pairs);

/// Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value (the smallest for pct = 0).
/// Throws ArgumentError for an empty input or pct outside [0, 100].
double nearest_rank(std::vector<double> values, double pct);

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
};
Summary summarize(const std::vector<double>& values);

/// True iff the dataset row satisfies every predicate. Polygon predicates match rows whose cell at
/// the cover level belongs to the polygon's cover.
class RowMatcher {
 public:
  RowMatcher(const data::EncodedDataset& ds, const std::vector<query::Predicate>& predicates);
  bool operator()(std::size_t row) const;
  /// False when a predicate value lies outside its attribute's domain.
  bool satisfiable() const { return satisfiable_; }

 private:
  const data::EncodedDataset* ds_;
  std::vector<std::pair<std::size_t, std::vector<int>>> allowed_;  // attribute, sorted codes
  int level_ = -1;
  std::vector<std::uint64_t> cells_;  // sorted curve indices at level_
  bool satisfiable_ = true;
};

/// Aggregate of the rows matching a query. Returns NaN for MEAN/STDDEV/PERCENTILE/MIN/MAX over no
/// rows. STDDEV is the population standard deviation; PERCENTILE is nearest-rank.
double aggregate_rows(const data::EncodedDataset& ds, std::span<const std::size_t> rows, const query::Query& q,
                      double scale, std::size_t* matches = nullptr);

/// Exact answer by a sequential scan of every row; the ground truth for evaluation.
class ExactScan {
 public:
  explicit ExactScan(const data::EncodedDataset& ds);
  double estimate(const query::Query& q, std::size_t* matches = nullptr) const;

 private:
  const data::EncodedDataset* ds_;
  std::vector<std::size_t> rows_;
};

/// Uniform sample without replacement of round(rate * N) rows, drawn as a seeded Fisher-Yates
/// prefix. COUNT and SUM are scaled by 1 / rate; other aggregates are plain sample statistics.
class SampleEstimator {
 public:
  SampleEstimator(const data::EncodedDataset& ds, double rate, std::uint64_t seed);

  double rate() const { return rate_; }
  std::size_t size() const { return rows_.size(); }
  const std::vector<std::size_t>& rows() const { return rows_; }
  /// NaN when no sampled row matches a non-additive aggregate.
  double estimate(const query::Query& q, std::size_t* matches = nullptr) const;
  /// Raw storage of the sample at kSampleRowBytes per row.
  std::size_t state_bytes() const;

 private:
  const data::EncodedDataset* ds_;
  double rate_;
  std::vector<std::size_t> rows_;
};

/// Uncompressed bytes per sampled row used for state-size accounting.
inline constexpr std::size_t kSampleRowBytes = 16;

struct WorkloadConfig {
  int min_level = 13;
  int max_level = 16;
  std::size_t geo_queries = 500;
  std::size_t predicate_queries = 500;
  /// Adds an equality predicate on this datetime attribute to every query (empty: none).
  std::string extra_equals_attribute;
  /// Datetime attributes eligible for the 1-2 predicates; empty means all datetime attributes
  /// except extra_equals_attribute.
  std::vector<std::string> predicate_attributes;

  static WorkloadConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct WorkloadQuery {
  query::Query query;
  double truth = 0.0;
  int level = 0;
  int predicate_count = 0;  // non-spatial predicates
};
using Workload = std::vector<WorkloadQuery>;

/// Geo queries take the cell of a uniformly drawn row truncated to a uniform level; predicate
/// queries add 1 or 2 datetime equality predicates whose values come from that same row, never
/// day_of_month together with day_of_week. Truths come from an exact scan. Throws DataError for
/// an empty dataset.
Workload generate_workload(const data::EncodedDataset& ds, const WorkloadConfig& config, std::uint64_t seed);

/// JSON lines: {"query": {...}, "truth", "level", "predicate_count"}.
void save_workload(std::ostream& out, const Workload& w);
Workload load_workload(std::istream& in);

struct Estimator {
  std::string name;
  std::function<double(const query::Query&)> estimate;
};

struct StateSize {
  std::string name;
  std::size_t bytes = 0;
};

struct QueryRecord {
  std::size_t index = 0;
  int level = 0;
  int predicate_count = 0;
  double truth = 0.0;
  std::vector<double> estimates;  // per estimator
  std::vector<double> errors;     // q-error for COUNT, sMAPE term otherwise
};

struct BucketRow {
  std::string estimator;
  std::string bucket;
  Summary summary;
};

struct EvalReport {
  std::vector<std::string> estimators;
  std::vector<QueryRecord> records;
  std::vector<BucketRow> rows;
  std::vector<StateSize> state_sizes;

  /// Summary for one estimator and bucket ("all", "level=13", "N<100", "100<=N<1000",
  /// "N>=1000"). Throws ArgumentError if absent.
  const Summary& summary(const std::string& estimator, const std::string& bucket) const;
  void write_csv(std::ostream& out) const;
  void write_state_csv(std::ostream& out) const;
  void write_text(std::ostream& out) const;
};

std::string size_bucket(double truth);

/// Runs every estimator on every query (queries may run in parallel) and aggregates q-errors per
/// bucket. Queries whose truth is below 1 are skipped.
EvalReport run_eval(const Workload& workload, const std::vector<Estimator>& estimators,
                    std::vector<StateSize> state_sizes = {});

}  // namespace deepspace::eval
