#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deepspace/geocell.hpp"
#include "deepspace/model.hpp"
#include "deepspace/query.hpp"

namespace deepspace::query {

/// A conjunction resolved against a model: a category code per block (-1 when unconstrained) and
/// an optional cell.
struct Conjunction {
  std::vector<int> codes;
  std::optional<geo::Cell> cell;
};

/// Conditional distribution of a continuous attribute, in raw units.
struct ValueDistribution {
  bool log_normal = false;
  double mu = 0.0;     // Gaussian: mean; lognormal: mean of log(x)
  double sigma = 1.0;  // Gaussian: stddev; lognormal: stddev of log(x)

  double mean() const;
  double variance() const;
  double quantile(double p) const;
};

struct SubResult {
  std::string cell;
  double estimate = 0.0;
  double count = 0.0;
};

struct QueryResult {
  double estimate = 0.0;
  double selectivity = 0.0;
  double log_selectivity = 0.0;
  double count = 0.0;
  std::vector<SubResult> breakdown;  // one entry per cover cell for polygon queries
};

struct HeatCell {
  geo::Cell cell;
  geo::Rect bounds;
  double estimate = 0.0;
  double count = 0.0;
};

/// Answers queries from a trained density model.
///
/// The selectivity of a conjunction is a chain of conditionals in schema order with geo digits
/// last: each non-geo predicate's probability is read from a pass that conditions on the
/// predicates before it, and one final pass conditioned on all non-geo predicates reads the chained
/// geo digits of the cell. Aggregates read the continuous head from a pass conditioned on every
/// predicate including the cell prefix.
class QueryEngine {
 public:
  explicit QueryEngine(const model::DensityModel& model);

  const model::DensityModel& model() const { return *model_; }

  /// Resolves Equals and CellContains predicates. Returns nullopt when a value lies outside its
  /// attribute's domain (the conjunction is empty). Throws ArgumentError for unknown attributes,
  /// repeated attributes and InPolygon / InSet predicates.
  std::optional<Conjunction> resolve(const std::vector<Predicate>& predicates) const;

  /// log P(conjunction); -inf for an empty conjunction.
  double log_selectivity(const Conjunction& c) const;
  double log_selectivity(const std::vector<Predicate>& predicates) const;
  double selectivity(const std::vector<Predicate>& predicates) const;
  /// exp(log_selectivity) * N_total.
  double estimate_count(const std::vector<Predicate>& predicates) const;

  /// Distribution of a continuous attribute given the conjunction. Throws SpecError for heads
  /// other than a single Gaussian or lognormal.
  ValueDistribution conditional(const Conjunction& c, std::size_t attribute) const;

  /// Evaluates a query of any supported shape. Polygons are answered per cover cell and combined;
  /// set predicates are expanded into the disjoint conjunctions of their values (a one-value set
  /// is an equality predicate).
  /// PERCENTILE, MIN and MAX need a single conjunction and throw SpecError otherwise.
  QueryResult run(const Query& q) const;
  QueryResult aggregate(const std::vector<Predicate>& predicates, const AggregateSpec& spec) const;
  QueryResult polygon_query(const std::vector<geo::GeoPoint>& ring, int cover_level,
                            const std::vector<Predicate>& others, const AggregateSpec& spec) const;
  /// log P(predicates and attribute in values): one conjunction per value, combined by log-sum-exp.
  /// Set attributes are conditioned after every other predicate, so the values' probabilities sum
  /// to one.
  double marginal_in_set(const std::vector<Predicate>& predicates, const std::string& attribute,
                         const std::vector<nlohmann::json>& values) const;

  /// Per-cell aggregate over the level-`level` cells overlapping `bbox`, ascending by curve index.
  /// For COUNT, cells with an estimate below 0.5 are omitted. `filters` must be non-spatial.
  std::vector<HeatCell> heatmap(int level, const geo::Rect& bbox, const std::vector<Predicate>& filters,
                                const AggregateSpec& spec) const;

  /// Log-probabilities of many conjunctions that share their non-geo codes and differ only in the
  /// cell, which must all have the same level. Evaluated in one batched pass.
  std::vector<double> log_selectivity_cells(const std::vector<int>& codes, const std::vector<geo::Cell>& cells) const;
  std::vector<ValueDistribution> conditional_cells(const std::vector<int>& codes, const std::vector<geo::Cell>& cells,
                                                   std::size_t attribute) const;

 private:
  struct Term {
    double log_p = 0.0;
    std::optional<ValueDistribution> dist;
  };
  // Conjunctions sharing the Equals codes: one per (cell, combination of set values). Set
  // attributes are conditioned last, after the geo digits.
  struct Plan {
    std::vector<int> codes;
    std::vector<geo::Cell> cells;  // empty: no spatial constraint; otherwise all at one level
    std::vector<std::size_t> tail_blocks;
    std::vector<std::vector<int>> combos;  // codes of tail_blocks; one empty combo if no tail
  };
  struct Split {
    std::vector<Predicate> conjunctive;
    std::optional<InPolygon> polygon;
    std::vector<InSet> sets;
  };
  Split split(const std::vector<Predicate>& predicates) const;
  // Returns nullopt when the predicates cannot match (a value outside its domain).
  std::optional<Plan> plan(const Split& s) const;
  // Row-major over cells x combos.
  std::vector<Term> evaluate(const Plan& p, std::optional<std::size_t> attribute) const;
  QueryResult combine(const std::vector<Term>& terms, const AggregateSpec& spec) const;
  double nongeo_log_probability(const std::vector<int>& codes) const;
  nn::Matrix forward_rows(const std::vector<model::Evidence>& rows, const model::OrderingSample& ordering) const;
  ValueDistribution to_distribution(std::size_t block, std::span<const double> outputs) const;

  const model::DensityModel* model_;
};

/// Order-statistic approximation for the r-th smallest of n draws: mu + sigma * Phi^-1((r - pi/8) /
/// (n - pi/4 + 1)).
double order_statistic(const ValueDistribution& d, double n, double r);

}  // namespace deepspace::query
