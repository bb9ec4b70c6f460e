#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "deepspace/errors.hpp"
#include "deepspace/evaluation.hpp"
#include "deepspace/synthetic.hpp"

namespace deepspace::eval {

namespace {

using query::AggregateFunction;
using query::AggregateSpec;
using query::CellContains;
using query::Equals;
using query::Query;

const data::EncodedDataset& dataset() {
  static const data::EncodedDataset ds = [] {
    synth::SyntheticConfig c;
    c.rows = 20000;
    c.seed = 77;
    return synth::generate(c, synth::synthetic_schema(13));
  }();
  return ds;
}

// Direct scan written against raw columns only.
std::vector<double> brute_force_values(const data::EncodedDataset& ds, const geo::Cell& cell, int hour) {
  const auto& s = ds.schema();
  const auto h = s.index_of("hour");
  const auto fare = s.index_of("fare");
  std::vector<double> out;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto full = geo::encode(ds.location(r), s.geo_levels(), s.domain());
    if (full.ancestor(cell.level()) != cell) continue;
    if (hour >= 0 && ds.code(r, h) != hour) continue;
    out.push_back(ds.value(r, fare));
  }
  return out;
}

WorkloadConfig small_workload() {
  WorkloadConfig c;
  c.min_level = 6;
  c.max_level = 10;
  c.geo_queries = 150;
  c.predicate_queries = 150;
  return c;
}

}  // namespace

TEST(EvaluationTest, QErrorExamples) {
  EXPECT_DOUBLE_EQ(qerror(10, 10), 1.0);
  EXPECT_DOUBLE_EQ(qerror(5, 20), 4.0);
  EXPECT_DOUBLE_EQ(qerror(20, 5), 4.0);
  EXPECT_DOUBLE_EQ(qerror(0, 7), 7.0);
  EXPECT_DOUBLE_EQ(qerror(0.25, 3), 3.0);
  EXPECT_THROW(qerror(3, 0), ArgumentError);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1.0, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    EXPECT_DOUBLE_EQ(qerror(a, b), qerror(b, a));
    EXPECT_GE(qerror(a, b), 1.0);
  }
}

TEST(EvaluationTest, SmapeExamples) {
  const std::vector<std::pair<double, double>> same{{5, 5}, {100, 100}};
  EXPECT_DOUBLE_EQ(smape(same).value, 0.0);
  const std::vector<std::pair<double, double>> bound{{100, 0}};
  EXPECT_DOUBLE_EQ(smape(bound).value, 2.0);
  const std::vector<std::pair<double, double>> half{{100, 50}};
  EXPECT_NEAR(smape(half).value, 50.0 / 75.0, 1e-15);
  const std::vector<std::pair<double, double>> with_zero{{0, 0}, {100, 50}, {10, 10}};
  const auto r = smape(with_zero);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.used, 2u);
  EXPECT_NEAR(r.value, (50.0 / 75.0) / 2.0, 1e-15);
}

TEST(EvaluationTest, NearestRankPercentiles) {
  const std::vector<double> v{15, 20, 35, 40, 50};
  EXPECT_EQ(nearest_rank(v, 0), 15);
  EXPECT_EQ(nearest_rank(v, 5), 15);
  EXPECT_EQ(nearest_rank(v, 30), 20);
  EXPECT_EQ(nearest_rank(v, 40), 20);
  EXPECT_EQ(nearest_rank(v, 50), 35);
  EXPECT_EQ(nearest_rank(v, 100), 50);
  const std::vector<double> w{3, 6, 7, 8, 8, 10, 13, 15, 16, 20};
  EXPECT_EQ(nearest_rank(w, 25), 7);
  EXPECT_EQ(nearest_rank(w, 50), 8);
  EXPECT_EQ(nearest_rank(w, 75), 15);
  EXPECT_EQ(nearest_rank({9, 1, 5}, 50), 5);
  EXPECT_THROW(nearest_rank({}, 50), ArgumentError);
  EXPECT_THROW(nearest_rank(v, 101), ArgumentError);
  const auto s = summarize({4.0});
  EXPECT_EQ(s.mean, 4.0);
  EXPECT_EQ(s.p50, 4.0);
  EXPECT_EQ(s.p95, 4.0);
}

TEST(EvaluationTest, ExactScanMatchesBruteForce) {
  const auto& ds = dataset();
  const ExactScan exact(ds);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 30; ++i) {
    const auto cell = ds.cell(rng() % ds.size(), static_cast<int>(4 + rng() % 6));
    const int hour = i % 3 == 0 ? -1 : static_cast<int>(rng() % 24);
    Query q;
    q.predicates.push_back(CellContains{cell});
    if (hour >= 0) q.predicates.push_back(Equals{"hour", hour});
    const auto values = brute_force_values(ds, cell, hour);
    EXPECT_EQ(exact.estimate(q), static_cast<double>(values.size()));
    if (values.empty()) continue;
    q.aggregate = AggregateSpec{AggregateFunction::Mean, "fare", 0.5};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    EXPECT_NEAR(exact.estimate(q), mean, 1e-9);
    q.aggregate.function = AggregateFunction::Max;
    EXPECT_EQ(exact.estimate(q), *std::max_element(values.begin(), values.end()));
  }
}

TEST(EvaluationTest, PolygonTruthUsesCoverCells) {
  const auto& ds = dataset();
  const auto& d = ds.schema().domain();
  const std::vector<geo::GeoPoint> ring{{d.min_lon, d.min_lat}, {(d.min_lon + d.max_lon) / 2, d.min_lat},
                                        {(d.min_lon + d.max_lon) / 2, d.max_lat}, {d.min_lon, d.max_lat}};
  const ExactScan exact(ds);
  const double left = exact.estimate(Query{{query::InPolygon{ring, 4}}, AggregateSpec{}});
  double by_cells = 0.0;
  for (const auto& c : geo::cover_polygon(ring, 4, d)) by_cells += exact.estimate(Query{{CellContains{c}}, AggregateSpec{}});
  EXPECT_EQ(left, by_cells);
}

TEST(EvaluationTest, SamplingBaseline) {
  const auto& ds = dataset();
  const SampleEstimator s(ds, 0.01, 3);
  EXPECT_EQ(s.size(), 200u);
  EXPECT_EQ(s.state_bytes(), 200u * 16u);
  EXPECT_TRUE(std::is_sorted(s.rows().begin(), s.rows().end()));
  EXPECT_EQ(std::set<std::size_t>(s.rows().begin(), s.rows().end()).size(), 200u);
  const SampleEstimator again(ds, 0.01, 3);
  EXPECT_EQ(s.rows(), again.rows());
  std::mt19937_64 rng(4);
  for (int i = 0; i < 30; ++i) {
    const Query q{{CellContains{ds.cell(rng() % ds.size(), 3)}}, AggregateSpec{}};
    std::size_t matches = 0;
    const double est = s.estimate(q, &matches);
    EXPECT_DOUBLE_EQ(est, static_cast<double>(matches) * 100.0);
  }
  // A cell holding no sampled row estimates zero, which the q-error reads as one.
  const Query fine{{CellContains{ds.cell(0, 13)}}, AggregateSpec{}};
  std::size_t matches = 1;
  const double est = SampleEstimator(ds, 0.0005, 5).estimate(fine, &matches);
  if (matches == 0) {
    EXPECT_EQ(est, 0.0);
    EXPECT_DOUBLE_EQ(qerror(est, 7), 7.0);
  }
  EXPECT_THROW(SampleEstimator(ds, 0.0, 1), ArgumentError);
}

TEST(EvaluationTest, FullSampleIsExact) {
  const auto& ds = dataset();
  const SampleEstimator full(ds, 1.0, 6);
  const ExactScan exact(ds);
  std::mt19937_64 rng(7);
  for (auto f : {AggregateFunction::Count, AggregateFunction::Sum, AggregateFunction::Mean, AggregateFunction::Stddev,
                 AggregateFunction::Percentile, AggregateFunction::Min, AggregateFunction::Max}) {
    for (int i = 0; i < 10; ++i) {
      const std::size_t row = rng() % ds.size();
      const Query q{{CellContains{ds.cell(row, 7)}, Equals{"hour", ds.code(row, ds.schema().index_of("hour"))}},
                    AggregateSpec{f, "fare", 0.9}};
      EXPECT_EQ(full.estimate(q), exact.estimate(q)) << function_name(f);
    }
  }
}

TEST(EvaluationTest, WorkloadFollowsProtocol) {
  const auto& ds = dataset();
  const auto config = small_workload();
  const auto w = generate_workload(ds, config, 11);
  ASSERT_EQ(w.size(), 300u);
  const ExactScan exact(ds);
  std::set<int> levels;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& wq = w[i];
    EXPECT_GE(wq.level, 6);
    EXPECT_LE(wq.level, 10);
    levels.insert(wq.level);
    EXPECT_GE(wq.truth, 1.0);
    EXPECT_EQ(wq.truth, exact.estimate(wq.query));
    std::set<std::string> attrs;
    int spatial = 0;
    for (const auto& p : wq.query.predicates) {
      if (const auto* e = std::get_if<Equals>(&p)) attrs.insert(e->attribute);
      if (std::holds_alternative<CellContains>(p)) ++spatial;
    }
    EXPECT_EQ(spatial, 1);
    EXPECT_FALSE(attrs.count("day_of_month") && attrs.count("day_of_week"));
    EXPECT_EQ(static_cast<int>(attrs.size()), wq.predicate_count);
    if (i < 150) {
      EXPECT_EQ(wq.predicate_count, 0);
    } else {
      EXPECT_GE(wq.predicate_count, 1);
      EXPECT_LE(wq.predicate_count, 2);
    }
  }
  EXPECT_EQ(levels.size(), 5u);
  const auto again = generate_workload(ds, config, 11);
  std::ostringstream a, b;
  save_workload(a, w);
  save_workload(b, again);
  EXPECT_EQ(a.str(), b.str());
  std::istringstream in(a.str());
  const auto loaded = load_workload(in);
  std::ostringstream c;
  save_workload(c, loaded);
  EXPECT_EQ(c.str(), a.str());
}

TEST(EvaluationTest, WorkloadExtraEquality) {
  synth::SyntheticConfig c;
  c.rows = 4000;
  c.months = {1, 2};
  const auto ds = synth::generate(c, synth::synthetic_schema(10, true));
  auto config = small_workload();
  config.extra_equals_attribute = "month";
  const auto w = generate_workload(ds, config, 12);
  for (const auto& wq : w) {
    bool has_month = false;
    for (const auto& p : wq.query.predicates) {
      if (const auto* e = std::get_if<Equals>(&p)) {
        has_month |= e->attribute == "month";
      }
    }
    EXPECT_TRUE(has_month);
    EXPECT_GE(wq.truth, 1.0);
  }
}

TEST(EvaluationTest, WorkloadErrors) {
  EXPECT_THROW(generate_workload(data::EncodedDataset(synth::synthetic_schema(13)), small_workload(), 1), DataError);
  auto deep = small_workload();
  deep.max_level = 14;
  EXPECT_THROW(generate_workload(dataset(), deep, 1), ConfigError);
  EXPECT_THROW(WorkloadConfig::from_json({{"levels", 3}}), ConfigError);
  std::istringstream bad("{\"query\": 3}\n");
  EXPECT_THROW(load_workload(bad), ParseError);
}

TEST(EvaluationTest, ReportOfExactEstimators) {
  const auto& ds = dataset();
  const auto w = generate_workload(ds, small_workload(), 13);
  const ExactScan exact(ds);
  const SampleEstimator full(ds, 1.0, 1);
  const SampleEstimator tenth(ds, 0.1, 1);
  const std::vector<Estimator> estimators{{"exact", [&](const Query& q) { return exact.estimate(q); }},
                                          {"sample 100%", [&](const Query& q) { return full.estimate(q); }},
                                          {"sample 10%", [&](const Query& q) { return tenth.estimate(q); }}};
  const auto report = run_eval(w, estimators, {{"sample 10%", tenth.state_bytes()}});
  ASSERT_EQ(report.records.size(), w.size());
  for (const auto& r : report.records) {
    EXPECT_EQ(r.errors[0], 1.0);
    EXPECT_EQ(r.errors[1], 1.0);
  }
  EXPECT_EQ(report.summary("exact", "all").p95, 1.0);
  EXPECT_GE(report.summary("sample 10%", "all").mean, 1.0);
  std::size_t by_size = 0, by_level = 0;
  for (const auto& b : {"N<100", "100<=N<1000", "N>=1000"}) {
    for (const auto& row : report.rows) {
      if (row.estimator == "exact" && row.bucket == b) by_size += row.summary.count;
    }
  }
  for (int level = 6; level <= 10; ++level) by_level += report.summary("exact", "level=" + std::to_string(level)).count;
  EXPECT_EQ(by_size, w.size());
  EXPECT_EQ(by_level, w.size());
  EXPECT_EQ(size_bucket(99), "N<100");
  EXPECT_EQ(size_bucket(100), "100<=N<1000");
  EXPECT_EQ(size_bucket(1000), "N>=1000");
  std::ostringstream csv, text, state;
  report.write_csv(csv);
  report.write_text(text);
  report.write_state_csv(state);
  EXPECT_NE(csv.str().find("mean"), std::string::npos);
  EXPECT_NE(csv.str().find("p50"), std::string::npos);
  EXPECT_NE(csv.str().find("p95"), std::string::npos);
  EXPECT_NE(text.str().find("50th"), std::string::npos);
  EXPECT_NE(state.str().find("sample 10%"), std::string::npos);
  EXPECT_THROW(report.summary("exact", "level=99"), ArgumentError);
}

TEST(EvaluationTest, NonCountQueriesUseSmapeTerms) {
  const auto& ds = dataset();
  const ExactScan exact(ds);
  Workload w;
  const std::size_t row = 17;
  WorkloadQuery wq;
  wq.query = Query{{CellContains{ds.cell(row, 5)}}, AggregateSpec{AggregateFunction::Mean, "fare", 0.5}};
  wq.truth = exact.estimate(wq.query);
  wq.level = 5;
  w.push_back(wq);
  const double truth = wq.truth;
  const auto report = run_eval(w, {{"exact", [&](const Query& q) { return exact.estimate(q); }},
                                   {"half", [&](const Query& q) { return exact.estimate(q) / 2; }}});
  EXPECT_EQ(report.records[0].errors[0], 0.0);
  EXPECT_NEAR(report.records[0].errors[1], (truth / 2) / (0.75 * truth), 1e-12);
  const auto& s = report.summary("half", "all");
  EXPECT_EQ(s.mean, s.p50);
  EXPECT_EQ(s.p50, s.p95);
}

}  // namespace deepspace::eval
