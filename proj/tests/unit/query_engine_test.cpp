#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "deepspace/errors.hpp"
#include "deepspace/math.hpp"
#include "deepspace/query_engine.hpp"
#include "test_support.hpp"

namespace deepspace::query {

namespace {

using geo::Cell;
using geo::GeoPoint;
using testing::random_model;
using testing::small_schema;
using testing::zero_output_model;

// Standard normal quantile by bisection on the complementary error function.
double bisect_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Random weights everywhere except the output layer, so every head is its prior: uniform
// categoricals and a standardized unit Gaussian (raw mean 5, stddev 2).
model::DensityModel flat_output_model(std::uint64_t n_total, int levels = 3,
                                      data::HeadType head = data::HeadType::Gaussian, int components = 1) {
  auto m = random_model(small_schema(levels, head, components), {16, 16}, 11, n_total);
  m.network().layers().back().weights.setZero();
  m.network().layers().back().bias.setZero();
  return m;
}

std::vector<GeoPoint> rect_ring(double x0, double y0, double x1, double y1) {
  return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

Query count_query(std::vector<Predicate> p) { return Query{std::move(p), AggregateSpec{}}; }

AggregateSpec agg(AggregateFunction f, double p = 0.5) { return AggregateSpec{f, "amount", p}; }

std::vector<Predicate> random_predicates(std::mt19937_64& rng, int levels) {
  std::vector<Predicate> p;
  if (rng() % 2) p.push_back(Equals{"color", nlohmann::json(std::vector<std::string>{"red", "green", "blue"}[rng() % 3])});
  if (rng() % 2) p.push_back(Equals{"hour", static_cast<int>(rng() % 24)});
  const int level = static_cast<int>(rng() % static_cast<std::uint64_t>(levels));
  if (level > 0 || rng() % 2) {
    p.push_back(CellContains{Cell(level, rng() % (std::uint64_t{1} << (2 * level)))});
  }
  return p;
}

std::optional<Cell> cell_of(const std::vector<Predicate>& p) {
  for (const auto& x : p) {
    if (const auto* c = std::get_if<CellContains>(&x)) return c->cell;
  }
  return std::nullopt;
}

std::vector<Predicate> with_cell(std::vector<Predicate> p, const Cell& c) {
  std::erase_if(p, [](const Predicate& x) { return std::holds_alternative<CellContains>(x); });
  p.push_back(CellContains{c});
  return p;
}

}  // namespace

TEST(QueryEngineTest, EmptyConjunction) {
  const auto m = random_model(small_schema(3), {16, 16}, 1, 123457);
  const QueryEngine e(m);
  EXPECT_EQ(e.log_selectivity(std::vector<Predicate>{}), 0.0);
  EXPECT_EQ(e.selectivity({}), 1.0);
  const auto r = e.run(count_query({}));
  EXPECT_EQ(r.estimate, 123457.0);
  EXPECT_EQ(r.count, 123457.0);
}

TEST(QueryEngineTest, UniformHeadsOfZeroOutputModel) {
  const auto m = zero_output_model(small_schema(3), {16, 16}, 10000000);
  const QueryEngine e(m);
  EXPECT_NEAR(e.selectivity({Equals{"color", "green"}}), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(e.selectivity({Equals{"hour", 7}}), 1.0 / 24.0, 1e-15);
  EXPECT_NEAR(e.selectivity({CellContains{Cell::parse("213")}}), 1.0 / 64.0, 1e-15);
  EXPECT_NEAR(e.selectivity({Equals{"hour", 7}, Equals{"color", "red"}, CellContains{Cell::parse("2")}}),
              1.0 / 288.0, 1e-15);
  const auto five = zero_output_model(small_schema(5), {16, 16}, 10000000);
  EXPECT_NEAR(QueryEngine(five).estimate_count({CellContains{Cell::parse("01230")}}), 10000000.0 / 1024.0, 1e-6);
}

TEST(QueryEngineTest, UnknownValuesAndAttributes) {
  const auto m = random_model(small_schema(3), {16}, 2);
  const QueryEngine e(m);
  EXPECT_EQ(e.selectivity({Equals{"color", "purple"}}), 0.0);
  EXPECT_EQ(e.log_selectivity(std::vector<Predicate>{Equals{"hour", 24}}), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(e.run(count_query({Equals{"color", "purple"}})).estimate, 0.0);
  EXPECT_THROW(e.selectivity({Equals{"colour", "red"}}), ArgumentError);
  EXPECT_THROW(e.selectivity({Equals{"color", "red"}, Equals{"color", "blue"}}), ArgumentError);
  EXPECT_THROW(e.selectivity({CellContains{Cell::parse("0123")}}), ArgumentError);
}

TEST(QueryEngineTest, ChainNormalization) {
  const int levels = 4;
  const auto m = random_model(small_schema(levels), {24, 24}, 3);
  const QueryEngine e(m);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto p = random_predicates(rng, levels);
    const Cell parent = cell_of(p).value_or(Cell{});
    p = with_cell(p, parent);
    double children = 0.0;
    for (const auto& c : geo::children(parent, m.schema().domain())) children += e.selectivity(with_cell(p, c));
    const double whole = e.selectivity(p);
    ASSERT_NEAR(children, whole, 1e-6 * std::max(whole, 1e-300)) << i;
    ASSERT_NEAR(children, whole, 1e-12);
  }
}

TEST(QueryEngineTest, RefiningOrAppendingLaterPredicatesNeverIncreasesSelectivity) {
  const auto m = random_model(small_schema(4), {24, 24}, 4);
  const QueryEngine e(m);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Cell c(2, rng() % 16);
    const double coarse = e.selectivity({Equals{"hour", 3}, CellContains{c}});
    const double fine = e.selectivity({Equals{"hour", 3}, CellContains{geo::children(c, m.schema().domain())[rng() % 4]}});
    EXPECT_LE(fine, coarse * (1 + 1e-12));
    const double one = e.selectivity({Equals{"color", "red"}});
    const double two = e.selectivity({Equals{"color", "red"}, Equals{"hour", static_cast<int>(rng() % 24)}});
    EXPECT_LE(two, one * (1 + 1e-12));
    EXPECT_LE(e.selectivity({Equals{"color", "red"}, CellContains{c}}), one * (1 + 1e-12));
  }
}

TEST(QueryEngineTest, BatchedCellsMatchSingleQueries) {
  const auto m = random_model(small_schema(3), {16, 16}, 5);
  const QueryEngine e(m);
  std::vector<Cell> cells;
  for (std::uint64_t i = 0; i < 64; ++i) cells.emplace_back(3, i);
  const std::vector<int> codes{2, 9, -1, -1, -1, -1};
  const auto batched = e.log_selectivity_cells(codes, cells);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_NEAR(batched[i], e.log_selectivity({Equals{"color", "blue"}, Equals{"hour", 9}, CellContains{cells[i]}}),
                1e-12);
  }
}

TEST(QueryEngineTest, AggregatesOfFlatOutputModel) {
  const auto m = flat_output_model(1000);
  const QueryEngine e(m);
  const std::vector<Predicate> p{Equals{"color", "red"}};
  EXPECT_NEAR(e.aggregate(p, agg(AggregateFunction::Mean)).estimate, 5.0, 1e-12);
  EXPECT_NEAR(e.aggregate(p, agg(AggregateFunction::Stddev)).estimate, 2.0, 1e-12);
  EXPECT_NEAR(e.aggregate(p, agg(AggregateFunction::Percentile, 0.5)).estimate, 5.0, 1e-12);
  EXPECT_NEAR(e.aggregate(p, agg(AggregateFunction::Percentile, 0.8413447460685429)).estimate, 7.0, 1e-9);
  const auto count = e.aggregate(p, AggregateSpec{}).estimate;
  EXPECT_NEAR(count, 1000.0 / 3.0, 1e-9);
  EXPECT_EQ(e.aggregate(p, agg(AggregateFunction::Sum)).estimate, count * 5.0);
}

TEST(QueryEngineTest, SumIsCountTimesMean) {
  const auto m = random_model(small_schema(3), {16, 16}, 6, 50000);
  const QueryEngine e(m);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_predicates(rng, 3);
    const double count = e.aggregate(p, AggregateSpec{}).estimate;
    const double mean = e.aggregate(p, agg(AggregateFunction::Mean)).estimate;
    ASSERT_EQ(e.aggregate(p, agg(AggregateFunction::Sum)).estimate, count * mean);
  }
}

TEST(QueryEngineTest, MinMaxOrderStatistics) {
  const auto one = flat_output_model(1);
  const double min1 = QueryEngine(one).aggregate({}, agg(AggregateFunction::Min)).estimate;
  const double arg = (1.0 - math::kPi / 8) / (1.0 - math::kPi / 4 + 1.0);
  EXPECT_NEAR(arg, 0.49999, 1e-4);
  EXPECT_NEAR(min1, 5.0 + 2.0 * bisect_quantile(arg), 1e-9);
  EXPECT_NEAR(min1, 5.0, 1e-3);

  const auto hundred = flat_output_model(100);
  const double max100 = QueryEngine(hundred).aggregate({}, agg(AggregateFunction::Max)).estimate;
  const double z = bisect_quantile((100.0 - math::kPi / 8) / (100.0 - math::kPi / 4 + 1.0));
  EXPECT_NEAR(z, 2.51, 0.01);
  EXPECT_NEAR(max100, 5.0 + 2.0 * z, 1e-9);
  const double min100 = QueryEngine(hundred).aggregate({}, agg(AggregateFunction::Min)).estimate;
  EXPECT_NEAR(min100, 5.0 - 2.0 * z, 1e-9);

  EXPECT_THROW(QueryEngine(one).aggregate({CellContains{Cell::parse("012")}}, agg(AggregateFunction::Min)),
               EmptyResultError);
  EXPECT_THROW(QueryEngine(one).aggregate({Equals{"color", "purple"}}, agg(AggregateFunction::Max)),
               EmptyResultError);
}

TEST(QueryEngineTest, LogNormalAggregates) {
  ValueDistribution d{true, 0.3, 0.5};
  EXPECT_NEAR(d.mean(), std::exp(0.3 + 0.125), 1e-12);
  EXPECT_NEAR(d.variance(), (std::exp(0.25) - 1.0) * std::exp(0.6 + 0.25), 1e-12);
  EXPECT_NEAR(d.quantile(0.5), std::exp(0.3), 1e-12);
  EXPECT_NEAR(d.quantile(0.8413447460685429), std::exp(0.8), 1e-9);
  const auto m = flat_output_model(1000, 3, data::HeadType::LogNormal);
  const QueryEngine e(m);
  // Log-space mean 5 and stddev 2 in the flat model.
  EXPECT_NEAR(e.aggregate({}, agg(AggregateFunction::Mean)).estimate, std::exp(5.0 + 2.0), 1e-6);
  EXPECT_NEAR(e.aggregate({}, agg(AggregateFunction::Percentile, 0.5)).estimate, std::exp(5.0), 1e-9);
}

TEST(QueryEngineTest, UnsupportedHeadsAndShapes) {
  const auto mix = flat_output_model(1000, 3, data::HeadType::Gaussian, 3);
  const QueryEngine e(mix);
  EXPECT_NO_THROW(e.run(count_query({Equals{"color", "red"}})));
  EXPECT_THROW(e.aggregate({}, agg(AggregateFunction::Mean)), SpecError);
  const auto m = random_model(small_schema(3), {16}, 7);
  const QueryEngine g(m);
  EXPECT_THROW(g.aggregate({}, AggregateSpec{AggregateFunction::Mean, "color", 0.5}), ArgumentError);
  const InPolygon poly{rect_ring(0.1, 0.1, 0.6, 0.6), 2};
  EXPECT_THROW(g.run(Query{{poly}, agg(AggregateFunction::Percentile)}), SpecError);
  EXPECT_THROW(g.run(Query{{InSet{"hour", {1, 2}}}, agg(AggregateFunction::Max)}), SpecError);
}

TEST(QueryEngineTest, PolygonOfOneCellMatchesCellPredicate) {
  const auto m = random_model(small_schema(3), {16, 16}, 8, 10000);
  const QueryEngine e(m);
  const Cell c = Cell::parse("21");
  const auto b = geo::cell_bounds(c, m.schema().domain());
  for (auto f : {AggregateFunction::Count, AggregateFunction::Mean, AggregateFunction::Stddev, AggregateFunction::Sum}) {
    const auto poly = e.run(Query{{InPolygon{rect_ring(b.min_lon, b.min_lat, b.max_lon, b.max_lat), 2},
                                   Equals{"hour", 5}},
                                  agg(f)});
    const auto cell = e.run(Query{{CellContains{c}, Equals{"hour", 5}}, agg(f)});
    EXPECT_NEAR(poly.estimate, cell.estimate, 1e-9 * std::abs(cell.estimate)) << function_name(f);
    EXPECT_EQ(poly.breakdown.size(), 1u);
  }
}

TEST(QueryEngineTest, PolygonCountsAreAdditiveAndNormalized) {
  const auto m = random_model(small_schema(4), {24, 24}, 9, 20000);
  const QueryEngine e(m);
  const auto whole = e.run(count_query({InPolygon{rect_ring(0, 0, 1, 1), 3}})).estimate;
  EXPECT_NEAR(whole, 20000.0, 200.0);
  EXPECT_NEAR(whole, 20000.0, 1e-6);
  const auto left = e.run(count_query({InPolygon{rect_ring(0, 0, 0.5, 1), 3}, Equals{"color", "red"}})).estimate;
  const auto right = e.run(count_query({InPolygon{rect_ring(0.5, 0, 1, 1), 3}, Equals{"color", "red"}})).estimate;
  const auto red = e.run(count_query({Equals{"color", "red"}})).estimate;
  EXPECT_NEAR(left + right, red, 1e-9 * red);
}

TEST(QueryEngineTest, PolygonMeanAndStddevCombineAcrossCells) {
  const auto m = random_model(small_schema(3), {16, 16}, 10, 5000);
  const QueryEngine e(m);
  const std::vector<GeoPoint> ring{{0.05, 0.1}, {0.8, 0.2}, {0.4, 0.9}};
  const auto cover = geo::cover_polygon(ring, 2, m.schema().domain());
  ASSERT_GT(cover.size(), 2u);
  double n = 0.0, s1 = 0.0, s2 = 0.0;
  for (const auto& c : cover) {
    const std::vector<Predicate> p{CellContains{c}, Equals{"color", "blue"}};
    const double cnt = e.aggregate(p, AggregateSpec{}).estimate;
    const double mu = e.aggregate(p, agg(AggregateFunction::Mean)).estimate;
    const double sd = e.aggregate(p, agg(AggregateFunction::Stddev)).estimate;
    n += cnt;
    s1 += cnt * mu;
    s2 += cnt * (sd * sd + mu * mu);
  }
  const double mean = s1 / n;
  const double stddev = std::sqrt(s2 / n - mean * mean);
  const std::vector<Predicate> q{InPolygon{ring, 2}, Equals{"color", "blue"}};
  EXPECT_NEAR(e.run(Query{q, AggregateSpec{}}).estimate, n, 1e-9 * n);
  EXPECT_NEAR(e.run(Query{q, agg(AggregateFunction::Mean)}).estimate, mean, 1e-9 * std::abs(mean));
  EXPECT_NEAR(e.run(Query{q, agg(AggregateFunction::Stddev)}).estimate, stddev, 1e-9 * stddev);
  EXPECT_NEAR(e.run(Query{q, agg(AggregateFunction::Sum)}).estimate, s1, 1e-9 * std::abs(s1));
}

TEST(QueryEngineTest, SetPredicates) {
  const auto m = random_model(small_schema(3), {24, 24}, 12, 7000);
  const QueryEngine e(m);
  std::vector<nlohmann::json> all_hours;
  for (int h = 0; h < 24; ++h) all_hours.push_back(h);
  const std::vector<Predicate> base{Equals{"color", "green"}, CellContains{Cell::parse("31")}};
  EXPECT_NEAR(std::exp(e.marginal_in_set(base, "hour", all_hours)), e.selectivity(base), 1e-9);
  auto with_all = base;
  with_all.push_back(InSet{"hour", all_hours});
  EXPECT_NEAR(e.run(count_query(with_all)).estimate, e.run(count_query(base)).estimate, 1e-9 * 7000);

  auto single = base;
  single.push_back(InSet{"hour", {13}});
  auto equals = base;
  equals.push_back(Equals{"hour", 13});
  EXPECT_EQ(e.run(count_query(single)).estimate, e.run(count_query(equals)).estimate);

  // A subset lies between its largest member and the whole.
  auto some = base;
  some.push_back(InSet{"hour", {7, 8, 9}});
  const double subset = e.run(count_query(some)).estimate;
  EXPECT_LT(subset, e.run(count_query(base)).estimate);
  EXPECT_GT(subset, 0.0);
  EXPECT_THROW(e.marginal_in_set(base, "amount", {1.0}), SpecError);
}

TEST(QueryEngineTest, HeatmapCellsMatchCellQueries) {
  const auto m = random_model(small_schema(3), {16, 16}, 13, 40000);
  const QueryEngine e(m);
  const std::vector<Predicate> filters{Equals{"hour", 4}};
  const auto cells = e.heatmap(2, m.schema().domain().rect(), filters, AggregateSpec{});
  double total = 0.0;
  for (const auto& h : cells) {
    EXPECT_EQ(h.cell.level(), 2);
    EXPECT_GE(h.estimate, 0.5);
    EXPECT_NEAR(h.estimate, e.estimate_count({Equals{"hour", 4}, CellContains{h.cell}}), 1e-9 * h.estimate);
    total += h.estimate;
  }
  EXPECT_LE(total, e.estimate_count(filters) * (1 + 1e-9));
  const auto part = e.heatmap(3, {0.0, 0.0, 0.3, 0.3}, {}, agg(AggregateFunction::Mean));
  EXPECT_EQ(part.size(), 9u);
  EXPECT_THROW(e.heatmap(4, m.schema().domain().rect(), {}, AggregateSpec{}), ArgumentError);
}

TEST(QueryEngineTest, HeatmapOmitsNegligibleCounts) {
  const auto m = zero_output_model(small_schema(3), {8}, 31);
  const auto cells = QueryEngine(m).heatmap(3, m.schema().domain().rect(), {}, AggregateSpec{});
  EXPECT_TRUE(cells.empty());
  const auto coarse = QueryEngine(m).heatmap(2, m.schema().domain().rect(), {}, AggregateSpec{});
  EXPECT_EQ(coarse.size(), 16u);
}

TEST(QueryEngineTest, AnswersSurviveSerialization) {
  auto m = random_model(small_schema(3), {16, 16}, 14, 999);
  m.round_to_storage_precision();
  const auto back = model::deserialize(model::serialize(m));
  const QueryEngine a(m), b(back);
  std::mt19937_64 rng(15);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_predicates(rng, 3);
    EXPECT_EQ(a.run(count_query(p)).estimate, b.run(count_query(p)).estimate);
    EXPECT_EQ(a.run(Query{p, agg(AggregateFunction::Stddev)}).estimate,
              b.run(Query{p, agg(AggregateFunction::Stddev)}).estimate);
  }
}

TEST(QueryEngineTest, QueryJsonRoundTrip) {
  const auto j = nlohmann::json::parse(R"({
    "predicates": [
      {"type": "equals", "attribute": "hour", "value": 7},
      {"type": "cell", "tokens": "0213"},
      {"type": "in_set", "attribute": "color", "values": ["red", "blue"]}
    ],
    "aggregate": {"function": "percentile", "attribute": "amount", "p": 0.9}
  })");
  const auto q = parse_query(j);
  EXPECT_EQ(q.predicates.size(), 3u);
  EXPECT_EQ(q.aggregate.function, AggregateFunction::Percentile);
  EXPECT_EQ(to_json(parse_query(to_json(q))), to_json(q));
  EXPECT_THROW(parse_query(nlohmann::json::parse(R"({"predicates": [{"type": "near"}]})")), ArgumentError);
  EXPECT_THROW(parse_query(nlohmann::json::parse(R"({"aggregate": {"function": "median"}})")), ArgumentError);
  EXPECT_THROW(parse_query(nlohmann::json::parse(R"({"aggregate": {"function": "percentile", "attribute": "amount",
                                                                   "p": 1.5}})")),
               ArgumentError);
}

}  // namespace deepspace::query
