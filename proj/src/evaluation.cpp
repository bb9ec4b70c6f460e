#include "deepspace/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "deepspace/errors.hpp"
#include "deepspace/parallel.hpp"

namespace deepspace::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* const kBuckets[] = {"N<100", "100<=N<1000", "N>=1000"};

}  // namespace

double qerror(double estimate, double truth) {
  if (!(truth >= 1.0)) throw ArgumentError("q-error needs a true result of at least 1");
  const double e = std::max(estimate, 1.0);
  return std::max(e, truth) / std::min(e, truth);
}

SmapeResult smape(std::span<const std::pair<double, double>> pairs) {
  SmapeResult r;
  double sum = 0.0;
  for (const auto& [t, e] : pairs) {
    if (t == 0.0 && e == 0.0) {
      ++r.excluded;
      continue;
    }
    sum += std::abs(t - e) / ((std::abs(t) + std::abs(e)) / 2.0);
    ++r.used;
  }
  r.value = r.used ? sum / static_cast<double>(r.used) : 0.0;
  return r;
}

double nearest_rank(std::vector<double> values, double pct) {
  if (values.empty()) throw ArgumentError("percentile of an empty set");
  if (!(pct >= 0.0 && pct <= 100.0)) throw ArgumentError("percentile outside [0, 100]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(values.size())));
  return values[rank == 0 ? 0 : rank - 1];
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.p50 = nearest_rank(values, 50.0);
  s.p95 = nearest_rank(values, 95.0);
  return s;
}

RowMatcher::RowMatcher(const data::EncodedDataset& ds, const std::vector<query::Predicate>& predicates) : ds_(&ds) {
  const auto& schema = ds.schema();
  for (const auto& p : predicates) {
    std::size_t attribute = 0;
    std::vector<int> codes;
    if (const auto* e = std::get_if<query::Equals>(&p)) {
      attribute = schema.index_of(e->attribute);
      if (const auto c = schema.discrete_code(attribute, e->value)) codes.push_back(*c);
    } else if (const auto* s = std::get_if<query::InSet>(&p)) {
      attribute = schema.index_of(s->attribute);
      for (const auto& v : s->values) {
        if (const auto c = schema.discrete_code(attribute, v)) codes.push_back(*c);
      }
    } else if (const auto* c = std::get_if<query::CellContains>(&p)) {
      if (level_ >= 0) throw ArgumentError("at most one spatial predicate per query");
      level_ = c->cell.level();
      cells_.push_back(c->cell.curve_index());
      continue;
    } else {
      const auto& poly = std::get<query::InPolygon>(p);
      if (level_ >= 0) throw ArgumentError("at most one spatial predicate per query");
      level_ = poly.level;
      for (const auto& cell : geo::cover_polygon(poly.ring, poly.level, schema.domain())) {
        cells_.push_back(cell.curve_index());
      }
      continue;
    }
    std::sort(codes.begin(), codes.end());
    if (codes.empty()) satisfiable_ = false;
    allowed_.emplace_back(attribute, std::move(codes));
  }
  if (level_ > schema.geo_levels()) throw ArgumentError("cell level exceeds the dataset's geo levels");
  if (level_ >= 0 && cells_.empty()) satisfiable_ = false;
}

bool RowMatcher::operator()(std::size_t row) const {
  if (!satisfiable_) return false;
  for (const auto& [attribute, codes] : allowed_) {
    if (!std::binary_search(codes.begin(), codes.end(), ds_->code(row, attribute))) return false;
  }
  if (level_ >= 0) {
    const int shift = 2 * (ds_->schema().geo_levels() - level_);
    const std::uint64_t index = ds_->geo_index(row) >> shift;
    if (cells_.size() == 1) return index == cells_.front();
    return std::binary_search(cells_.begin(), cells_.end(), index);
  }
  return true;
}

double aggregate_rows(const data::EncodedDataset& ds, std::span<const std::size_t> rows, const query::Query& q,
                      double scale, std::size_t* matches) {
  using query::AggregateFunction;
  const RowMatcher match(ds, q.predicates);
  const auto f = q.aggregate.function;
  std::size_t attribute = 0;
  if (f != AggregateFunction::Count) {
    attribute = ds.schema().index_of(q.aggregate.attribute);
    if (!ds.schema().attribute(attribute).is_continuous()) {
      throw ArgumentError("aggregate attribute '" + q.aggregate.attribute + "' is not continuous");
    }
  }
  std::size_t n = 0;
  std::vector<double> values;
  for (auto r : rows) {
    if (!match(r)) continue;
    ++n;
    if (f != AggregateFunction::Count) values.push_back(ds.value(r, attribute));
  }
  if (matches) *matches = n;
  switch (f) {
    case AggregateFunction::Count:
      return static_cast<double>(n) * scale;
    case AggregateFunction::Sum:
      return std::accumulate(values.begin(), values.end(), 0.0) * scale;
    default:
      break;
  }
  if (values.empty()) return kNaN;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  switch (f) {
    case AggregateFunction::Mean:
      return mean;
    case AggregateFunction::Stddev: {
      double sq = 0.0;
      for (double v : values) sq += (v - mean) * (v - mean);
      return std::sqrt(sq / static_cast<double>(values.size()));
    }
    case AggregateFunction::Percentile:
      return nearest_rank(values, q.aggregate.p * 100.0);
    case AggregateFunction::Min:
      return *std::min_element(values.begin(), values.end());
    case AggregateFunction::Max:
      return *std::max_element(values.begin(), values.end());
    default:
      return kNaN;
  }
}

ExactScan::ExactScan(const data::EncodedDataset& ds) : ds_(&ds), rows_(ds.size()) {
  std::iota(rows_.begin(), rows_.end(), std::size_t{0});
}

double ExactScan::estimate(const query::Query& q, std::size_t* matches) const {
  return aggregate_rows(*ds_, rows_, q, 1.0, matches);
}

SampleEstimator::SampleEstimator(const data::EncodedDataset& ds, double rate, std::uint64_t seed)
    : ds_(&ds), rate_(rate) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ArgumentError("sampling rate must lie in (0, 1]");
  const auto n = ds.size();
  const auto k = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(rate * static_cast<double>(n))));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(perm[i], perm[pick(rng)]);
  }
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  rows_ = std::move(perm);
}

double SampleEstimator::estimate(const query::Query& q, std::size_t* matches) const {
  return aggregate_rows(*ds_, rows_, q, 1.0 / rate_, matches);
}

std::size_t SampleEstimator::state_bytes() const { return rows_.size() * kSampleRowBytes; }

std::string size_bucket(double truth) {
  if (truth < 100.0) return kBuckets[0];
  if (truth < 1000.0) return kBuckets[1];
  return kBuckets[2];
}

const Summary& EvalReport::summary(const std::string& estimator, const std::string& bucket) const {
  for (const auto& r : rows) {
    if (r.estimator == estimator && r.bucket == bucket) return r.summary;
  }
  throw ArgumentError("no summary for estimator '" + estimator + "' and bucket '" + bucket + "'");
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "estimator,bucket,count,mean,p50,p95\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.estimator << ',' << r.bucket << ',' << r.summary.count << ',' << r.summary.mean << ','
        << r.summary.p50 << ',' << r.summary.p95 << '\n';
  }
}

void EvalReport::write_state_csv(std::ostream& out) const {
  out << "name,bytes,kib\n";
  for (const auto& s : state_sizes) {
    out << s.name << ',' << s.bytes << ',' << std::fixed << std::setprecision(1)
        << static_cast<double>(s.bytes) / 1024.0 << '\n';
    out.unsetf(std::ios::floatfield);
  }
}

void EvalReport::write_text(std::ostream& out) const {
  std::vector<std::string> buckets;
  for (const auto& r : rows) {
    if (std::find(buckets.begin(), buckets.end(), r.bucket) == buckets.end()) buckets.push_back(r.bucket);
  }
  std::size_t width = 9;
  for (const auto& e : estimators) width = std::max(width, e.size() + 2);
  for (const auto& b : buckets) {
    out << b << '\n';
    out << std::left << std::setw(static_cast<int>(width)) << "estimator" << std::right << std::setw(8) << "n"
        << std::setw(12) << "mean" << std::setw(12) << "50th" << std::setw(12) << "95th" << '\n';
    for (const auto& r : rows) {
      if (r.bucket != b) continue;
      out << std::left << std::setw(static_cast<int>(width)) << r.estimator << std::right << std::setw(8)
          << r.summary.count << std::fixed << std::setprecision(3) << std::setw(12) << r.summary.mean
          << std::setw(12) << r.summary.p50 << std::setw(12) << r.summary.p95 << '\n';
      out.unsetf(std::ios::floatfield);
    }
    out << '\n';
  }
  if (!state_sizes.empty()) {
    out << "state size\n";
    for (const auto& s : state_sizes) {
      out << std::left << std::setw(static_cast<int>(width)) << s.name << std::right << std::fixed
          << std::setprecision(1) << std::setw(12) << static_cast<double>(s.bytes) / 1024.0 << " KiB\n";
      out.unsetf(std::ios::floatfield);
    }
  }
}

EvalReport run_eval(const Workload& workload, const std::vector<Estimator>& estimators,
                    std::vector<StateSize> state_sizes) {
  EvalReport report;
  report.state_sizes = std::move(state_sizes);
  for (const auto& e : estimators) report.estimators.push_back(e.name);

  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < workload.size(); ++i) {
    if (workload[i].truth >= 1.0) used.push_back(i);
  }
  report.records.resize(used.size());
  parallel_for(used.size(), 16, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      const auto& wq = workload[used[k]];
      QueryRecord rec;
      rec.index = used[k];
      rec.level = wq.level;
      rec.predicate_count = wq.predicate_count;
      rec.truth = wq.truth;
      const bool count = wq.query.aggregate.function == query::AggregateFunction::Count;
      for (const auto& e : estimators) {
        double est = kNaN;
        try {
          est = e.estimate(wq.query);
        } catch (const EmptyResultError&) {
        }
        rec.estimates.push_back(est);
        if (count) {
          rec.errors.push_back(qerror(std::isnan(est) ? 0.0 : est, wq.truth));
        } else {
          const double e2 = std::isnan(est) ? 0.0 : est;
          const std::pair<double, double> pair{wq.truth, e2};
          rec.errors.push_back(smape(std::span(&pair, 1)).value);
        }
      }
      report.records[k] = std::move(rec);
    }
  });

  std::vector<std::string> levels;
  for (const auto& r : report.records) {
    const auto name = "level=" + std::to_string(r.level);
    if (std::find(levels.begin(), levels.end(), name) == levels.end()) levels.push_back(name);
  }
  std::sort(levels.begin(), levels.end(), [](const std::string& a, const std::string& b) {
    return std::stoi(a.substr(6)) < std::stoi(b.substr(6));
  });
  std::vector<std::string> buckets{"all"};
  buckets.insert(buckets.end(), levels.begin(), levels.end());
  buckets.insert(buckets.end(), std::begin(kBuckets), std::end(kBuckets));

  for (const auto& b : buckets) {
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      std::vector<double> errs;
      for (const auto& r : report.records) {
        const bool in = b == "all" || b == "level=" + std::to_string(r.level) || b == size_bucket(r.truth);
        if (in) errs.push_back(r.errors[e]);
      }
      report.rows.push_back({estimators[e].name, b, summarize(errs)});
    }
  }
  return report;
}

}  // namespace deepspace::eval
