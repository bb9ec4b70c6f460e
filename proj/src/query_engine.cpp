#include "deepspace/query_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "deepspace/errors.hpp"
#include "deepspace/math.hpp"
#include "deepspace/parallel.hpp"

namespace deepspace::query {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxRows = std::size_t{1} << 22;
constexpr std::size_t kChunkRows = 2048;

model::OrderingSample ordering_for(const model::BlockIndexing& ix, const std::vector<bool>& nongeo, int depth) {
  return model::OrderingSample::make(ix, nongeo, depth);
}

double log_prob_of(std::span<const double> logits, int code) {
  return logits[static_cast<std::size_t>(code)] - math::log_sum_exp(logits);
}

}  // namespace

double ValueDistribution::mean() const {
  if (!log_normal) return mu;
  return std::exp(mu + sigma * sigma / 2.0);
}

double ValueDistribution::variance() const {
  if (!log_normal) return sigma * sigma;
  const double s2 = sigma * sigma;
  return std::expm1(s2) * std::exp(2.0 * mu + s2);
}

double ValueDistribution::quantile(double p) const {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("quantile level must lie in (0, 1)");
  const double z = std::sqrt(2.0) * math::erfinv(2.0 * p - 1.0);
  return log_normal ? std::exp(mu + sigma * z) : mu + sigma * z;
}

double order_statistic(const ValueDistribution& d, double n, double r) {
  const double z = math::std_normal_quantile((r - math::kPi / 8.0) / (n - math::kPi / 4.0 + 1.0));
  return d.log_normal ? std::exp(d.mu + d.sigma * z) : d.mu + d.sigma * z;
}

QueryEngine::QueryEngine(const model::DensityModel& model) : model_(&model) {}

nn::Matrix QueryEngine::forward_rows(const std::vector<model::Evidence>& rows,
                                     const model::OrderingSample& ordering) const {
  const auto& ix = model_->indexing();
  nn::Matrix out(static_cast<Eigen::Index>(rows.size()), ix.output_width);
  parallel_for(rows.size(), kChunkRows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t start = lo; start < hi; start += kChunkRows) {
      const std::size_t end = std::min(hi, start + kChunkRows);
      const nn::Matrix part =
          model_->forward(std::span<const model::Evidence>(rows.data() + start, end - start), ordering);
      out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) = part;
    }
  });
  return out;
}

ValueDistribution QueryEngine::to_distribution(std::size_t block, std::span<const double> outputs) const {
  const auto& blk = model_->indexing().blocks[block];
  const auto& st = model_->stats()[blk.attribute];
  const auto& name = model_->schema().attribute(blk.attribute).name;
  if (blk.head == model::HeadKind::Pareto || (blk.head == model::HeadKind::GaussianMixture && blk.components != 1)) {
    throw SpecError("aggregates over '" + name + "' need a single Gaussian or lognormal head");
  }
  ValueDistribution d;
  d.log_normal = blk.head == model::HeadKind::LogNormal;
  d.mu = st.unstandardize(outputs[1]);
  d.sigma = std::exp(outputs[2]) * st.stddev;
  return d;
}

double QueryEngine::nongeo_log_probability(const std::vector<int>& codes) const {
  const auto& ix = model_->indexing();
  std::vector<bool> flags(ix.block_count(), false);
  model::Evidence ev(ix.block_count());
  double total = 0.0;
  for (std::size_t b = 0; b < ix.block_count(); ++b) {
    if (ix.blocks[b].is_geo() || codes[b] < 0) continue;
    const auto ordering = ordering_for(ix, flags, 0);
    const nn::Matrix out = model_->forward(std::span<const model::Evidence>(&ev, 1), ordering);
    const auto& blk = ix.blocks[b];
    total += log_prob_of(std::span<const double>(out.row(0).data() + blk.output_offset,
                                                 static_cast<std::size_t>(blk.output_width)),
                         codes[b]);
    flags[b] = true;
    ev.codes[b] = codes[b];
  }
  return total;
}

std::vector<QueryEngine::Term> QueryEngine::evaluate(const Plan& p, std::optional<std::size_t> attribute) const {
  const auto& ix = model_->indexing();
  const std::size_t blocks = ix.block_count();
  const std::size_t n_cells = std::max<std::size_t>(1, p.cells.size());
  const std::size_t n_combos = p.combos.size();
  const std::size_t n_rows = n_cells * n_combos;
  if (n_rows > kMaxRows) throw ArgumentError("query expands to too many sub-queries");
  const int level = p.cells.empty() ? 0 : p.cells.front().level();

  std::vector<Term> terms(n_rows);
  const double base = nongeo_log_probability(p.codes);
  for (auto& t : terms) t.log_p = base;

  std::vector<bool> flags(blocks, false);
  for (std::size_t b = 0; b < blocks; ++b) flags[b] = !ix.blocks[b].is_geo() && p.codes[b] >= 0;

  // Evidence per row: Equals codes, the cell's digits and the row's set combination.
  std::vector<model::Evidence> rows(n_rows, model::Evidence(blocks));
  for (std::size_t c = 0; c < n_cells; ++c) {
    for (std::size_t k = 0; k < n_combos; ++k) {
      auto& ev = rows[c * n_combos + k];
      for (std::size_t b = 0; b < blocks; ++b) {
        if (flags[b]) ev.codes[b] = p.codes[b];
      }
      for (int l = 1; l <= level; ++l) ev.codes[ix.geo_block(l)] = p.cells[c].token(l - 1);
      for (std::size_t t = 0; t < p.tail_blocks.size(); ++t) ev.codes[p.tail_blocks[t]] = p.combos[k][t];
    }
  }

  if (level > 0) {
    // Geo digits depend on the Equals predicates only, so one row per cell suffices.
    std::vector<model::Evidence> cell_rows;
    cell_rows.reserve(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c) cell_rows.push_back(rows[c * n_combos]);
    const nn::Matrix out = forward_rows(cell_rows, ordering_for(ix, flags, 0));
    for (std::size_t c = 0; c < n_cells; ++c) {
      double lp = 0.0;
      for (int l = 1; l <= level; ++l) {
        const auto& blk = ix.blocks[ix.geo_block(l)];
        lp += log_prob_of(std::span<const double>(out.row(static_cast<Eigen::Index>(c)).data() + blk.output_offset, 4),
                          p.cells[c].token(l - 1));
      }
      for (std::size_t k = 0; k < n_combos; ++k) terms[c * n_combos + k].log_p += lp;
    }
  }

  for (std::size_t t = 0; t < p.tail_blocks.size(); ++t) {
    const std::size_t b = p.tail_blocks[t];
    const auto& blk = ix.blocks[b];
    const nn::Matrix out = forward_rows(rows, ordering_for(ix, flags, level));
    for (std::size_t r = 0; r < n_rows; ++r) {
      terms[r].log_p += log_prob_of(std::span<const double>(out.row(static_cast<Eigen::Index>(r)).data() +
                                                                blk.output_offset,
                                                            static_cast<std::size_t>(blk.output_width)),
                                    p.combos[r % n_combos][t]);
    }
    flags[b] = true;
  }

  if (attribute) {
    const std::size_t b = ix.attribute_block(*attribute);
    const auto& blk = ix.blocks[b];
    const nn::Matrix out = forward_rows(rows, ordering_for(ix, flags, level));
    for (std::size_t r = 0; r < n_rows; ++r) {
      terms[r].dist = to_distribution(b, std::span<const double>(out.row(static_cast<Eigen::Index>(r)).data() +
                                                                     blk.output_offset,
                                                                 static_cast<std::size_t>(blk.output_width)));
    }
  }
  return terms;
}

std::optional<Conjunction> QueryEngine::resolve(const std::vector<Predicate>& predicates) const {
  const auto& schema = model_->schema();
  const auto& ix = model_->indexing();
  Conjunction c;
  c.codes.assign(ix.block_count(), -1);
  bool empty = false;
  std::set<std::size_t> seen;
  for (const auto& p : predicates) {
    if (const auto* e = std::get_if<Equals>(&p)) {
      const auto a = schema.index_of(e->attribute);
      if (!schema.attribute(a).is_discrete()) {
        throw SpecError("equality predicates need a categorical or datetime attribute, got '" + e->attribute + "'");
      }
      if (!seen.insert(a).second) throw ArgumentError("attribute '" + e->attribute + "' constrained twice");
      const auto code = schema.discrete_code(a, e->value);
      if (!code) {
        empty = true;
        continue;
      }
      c.codes[ix.attribute_block(a)] = *code;
    } else if (const auto* cell = std::get_if<CellContains>(&p)) {
      if (c.cell) throw ArgumentError("at most one spatial predicate per query");
      if (cell->cell.level() > ix.geo_levels) {
        throw ArgumentError("cell level " + std::to_string(cell->cell.level()) + " exceeds the model's " +
                            std::to_string(ix.geo_levels) + " geo levels");
      }
      c.cell = cell->cell;
    } else {
      throw ArgumentError("only equality and cell predicates form a conjunction");
    }
  }
  if (empty) return std::nullopt;
  return c;
}

double QueryEngine::log_selectivity(const Conjunction& c) const {
  Plan p;
  p.codes = c.codes;
  if (c.cell && c.cell->level() > 0) p.cells.push_back(*c.cell);
  p.combos.emplace_back();
  return evaluate(p, std::nullopt).front().log_p;
}

double QueryEngine::log_selectivity(const std::vector<Predicate>& predicates) const {
  return run(Query{predicates, AggregateSpec{}}).log_selectivity;
}

double QueryEngine::selectivity(const std::vector<Predicate>& predicates) const {
  return std::exp(log_selectivity(predicates));
}

double QueryEngine::estimate_count(const std::vector<Predicate>& predicates) const {
  return run(Query{predicates, AggregateSpec{}}).count;
}

ValueDistribution QueryEngine::conditional(const Conjunction& c, std::size_t attribute) const {
  Plan p;
  p.codes = c.codes;
  if (c.cell && c.cell->level() > 0) p.cells.push_back(*c.cell);
  p.combos.emplace_back();
  return *evaluate(p, attribute).front().dist;
}

std::vector<double> QueryEngine::log_selectivity_cells(const std::vector<int>& codes,
                                                       const std::vector<geo::Cell>& cells) const {
  if (cells.empty()) return {};
  Plan p;
  p.codes = codes;
  p.cells = cells;
  p.combos.emplace_back();
  for (const auto& c : cells) {
    if (c.level() != cells.front().level()) throw ArgumentError("batched cells must share one level");
  }
  std::vector<double> out;
  if (cells.front().level() == 0) {
    out.assign(cells.size(), nongeo_log_probability(codes));
    return out;
  }
  for (const auto& t : evaluate(p, std::nullopt)) out.push_back(t.log_p);
  return out;
}

std::vector<ValueDistribution> QueryEngine::conditional_cells(const std::vector<int>& codes,
                                                              const std::vector<geo::Cell>& cells,
                                                              std::size_t attribute) const {
  if (cells.empty()) return {};
  Plan p;
  p.codes = codes;
  p.combos.emplace_back();
  if (cells.front().level() > 0) p.cells = cells;
  std::vector<ValueDistribution> out;
  for (const auto& t : evaluate(p, attribute)) out.push_back(*t.dist);
  if (p.cells.empty()) out.resize(cells.size(), out.front());
  return out;
}

QueryEngine::Split QueryEngine::split(const std::vector<Predicate>& predicates) const {
  Split s;
  for (const auto& p : predicates) {
    if (const auto* poly = std::get_if<InPolygon>(&p)) {
      if (s.polygon) throw ArgumentError("at most one spatial predicate per query");
      s.polygon = *poly;
    } else if (const auto* set = std::get_if<InSet>(&p)) {
      if (set->values.size() == 1) {
        s.conjunctive.push_back(Equals{set->attribute, set->values.front()});
      } else {
        s.sets.push_back(*set);
      }
    } else {
      s.conjunctive.push_back(p);
    }
  }
  if (s.polygon) {
    for (const auto& p : s.conjunctive) {
      if (std::holds_alternative<CellContains>(p)) throw ArgumentError("at most one spatial predicate per query");
    }
  }
  return s;
}

std::optional<QueryEngine::Plan> QueryEngine::plan(const Split& s) const {
  const auto& schema = model_->schema();
  const auto& ix = model_->indexing();
  const auto conj = resolve(s.conjunctive);
  if (!conj) return std::nullopt;
  Plan p;
  p.codes = conj->codes;
  if (s.polygon) {
    if (s.polygon->level < 0 || s.polygon->level > ix.geo_levels) {
      throw ArgumentError("polygon cover level " + std::to_string(s.polygon->level) + " outside [0, " +
                          std::to_string(ix.geo_levels) + "]");
    }
    p.cells = geo::cover_polygon(s.polygon->ring, s.polygon->level, schema.domain());
    if (p.cells.empty()) throw ArgumentError("polygon cover is empty");
    if (s.polygon->level == 0) p.cells.clear();
  } else if (conj->cell && conj->cell->level() > 0) {
    p.cells.push_back(*conj->cell);
  }

  // Set predicates on the same attribute intersect; a set on an Equals attribute filters it.
  std::vector<std::pair<std::size_t, std::set<int>>> sets;
  for (const auto& set : s.sets) {
    const auto a = schema.index_of(set.attribute);
    if (!schema.attribute(a).is_discrete()) {
      throw SpecError("set predicates need a categorical or datetime attribute, got '" + set.attribute + "'");
    }
    std::set<int> codes;
    for (const auto& v : set.values) {
      if (const auto code = schema.discrete_code(a, v)) codes.insert(*code);
    }
    const std::size_t b = ix.attribute_block(a);
    auto it = std::find_if(sets.begin(), sets.end(), [&](const auto& e) { return e.first == b; });
    if (it == sets.end()) {
      sets.emplace_back(b, std::move(codes));
    } else {
      std::set<int> both;
      std::set_intersection(it->second.begin(), it->second.end(), codes.begin(), codes.end(),
                            std::inserter(both, both.end()));
      it->second = std::move(both);
    }
  }
  std::sort(sets.begin(), sets.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  p.combos.emplace_back();
  for (auto& [b, codes] : sets) {
    if (p.codes[b] >= 0) {
      if (!codes.count(p.codes[b])) return std::nullopt;
      continue;
    }
    if (codes.empty()) return std::nullopt;
    p.tail_blocks.push_back(b);
    std::vector<std::vector<int>> next;
    for (const auto& combo : p.combos) {
      for (int code : codes) {
        auto c = combo;
        c.push_back(code);
        next.push_back(std::move(c));
      }
    }
    p.combos = std::move(next);
    if (p.combos.size() > kMaxRows) throw ArgumentError("set predicates expand to too many combinations");
  }
  return p;
}

QueryResult QueryEngine::combine(const std::vector<Term>& terms, const AggregateSpec& spec) const {
  QueryResult r;
  std::vector<double> lps;
  for (const auto& t : terms) lps.push_back(t.log_p);
  r.log_selectivity = terms.empty() ? kNegInf : std::min(0.0, math::log_sum_exp(lps));
  r.selectivity = std::exp(r.log_selectivity);
  r.count = r.selectivity * static_cast<double>(model_->n_total());
  if (spec.function == AggregateFunction::Count) {
    r.estimate = r.count;
    return r;
  }
  if (terms.empty() || !std::isfinite(r.log_selectivity)) {
    throw EmptyResultError("no rows qualify; " + function_name(spec.function) + " is undefined");
  }
  double mean = 0.0;
  double second = 0.0;
  for (const auto& t : terms) {
    const double w = std::exp(t.log_p - r.log_selectivity);
    const double m = t.dist->mean();
    mean += w * m;
    second += w * (t.dist->variance() + m * m);
  }
  switch (spec.function) {
    case AggregateFunction::Mean:
      r.estimate = mean;
      break;
    case AggregateFunction::Sum:
      r.estimate = r.count * mean;
      break;
    case AggregateFunction::Stddev:
      r.estimate = std::sqrt(std::max(0.0, second - mean * mean));
      break;
    case AggregateFunction::Percentile:
    case AggregateFunction::Min:
    case AggregateFunction::Max: {
      if (terms.size() != 1) {
        throw SpecError(function_name(spec.function) + " is not supported over polygon covers or value sets");
      }
      const auto& d = *terms.front().dist;
      if (spec.function == AggregateFunction::Percentile) {
        r.estimate = d.quantile(spec.p);
        break;
      }
      const double n = std::round(r.count);
      if (n < 1.0) throw EmptyResultError("estimated count rounds to zero; MIN/MAX undefined");
      r.estimate = order_statistic(d, n, spec.function == AggregateFunction::Min ? 1.0 : n);
      break;
    }
    case AggregateFunction::Count:
      break;
  }
  return r;
}

QueryResult QueryEngine::run(const Query& q) const {
  validate(q, model_->schema());
  const auto s = split(q.predicates);
  std::optional<std::size_t> attribute;
  if (q.aggregate.function != AggregateFunction::Count) attribute = model_->schema().index_of(q.aggregate.attribute);
  const auto p = plan(s);
  if (!p) return combine({}, q.aggregate);
  const auto terms = evaluate(*p, attribute);
  QueryResult r = combine(terms, q.aggregate);
  if (s.polygon) {
    const std::size_t per_cell = p->combos.size();
    const std::size_t cells = std::max<std::size_t>(1, p->cells.size());
    for (std::size_t c = 0; c < cells; ++c) {
      const std::vector<Term> part(terms.begin() + static_cast<std::ptrdiff_t>(c * per_cell),
                                   terms.begin() + static_cast<std::ptrdiff_t>((c + 1) * per_cell));
      AggregateSpec sub = q.aggregate;
      if (sub.function != AggregateFunction::Count && sub.function != AggregateFunction::Sum &&
          sub.function != AggregateFunction::Mean && sub.function != AggregateFunction::Stddev) {
        sub.function = AggregateFunction::Count;
      }
      const auto cr = combine(part, sub);
      r.breakdown.push_back({p->cells.empty() ? std::string() : p->cells[c].to_string(), cr.estimate, cr.count});
    }
  }
  return r;
}

QueryResult QueryEngine::aggregate(const std::vector<Predicate>& predicates, const AggregateSpec& spec) const {
  return run(Query{predicates, spec});
}

QueryResult QueryEngine::polygon_query(const std::vector<geo::GeoPoint>& ring, int cover_level,
                                       const std::vector<Predicate>& others, const AggregateSpec& spec) const {
  Query q{others, spec};
  q.predicates.push_back(InPolygon{ring, cover_level});
  return run(q);
}

double QueryEngine::marginal_in_set(const std::vector<Predicate>& predicates, const std::string& attribute,
                                    const std::vector<nlohmann::json>& values) const {
  const auto a = model_->schema().index_of(attribute);
  if (!model_->schema().attribute(a).is_discrete()) {
    throw SpecError("range marginalization over continuous attribute '" + attribute + "' is not supported");
  }
  Query q{predicates, AggregateSpec{}};
  q.predicates.push_back(InSet{attribute, values});
  return run(q).log_selectivity;
}

std::vector<HeatCell> QueryEngine::heatmap(int level, const geo::Rect& bbox, const std::vector<Predicate>& filters,
                                           const AggregateSpec& spec) const {
  const auto& schema = model_->schema();
  const auto& ix = model_->indexing();
  if (level < 0 || level > ix.geo_levels) {
    throw ArgumentError("heatmap level " + std::to_string(level) + " outside [0, " + std::to_string(ix.geo_levels) +
                        "]");
  }
  for (const auto& f : filters) {
    if (std::holds_alternative<CellContains>(f) || std::holds_alternative<InPolygon>(f)) {
      throw ArgumentError("heatmap filters must be non-spatial");
    }
  }
  validate(Query{filters, spec}, schema);
  const auto& d = schema.domain();
  const geo::Rect clipped{std::max(bbox.min_lon, d.min_lon), std::max(bbox.min_lat, d.min_lat),
                          std::min(bbox.max_lon, d.max_lon), std::min(bbox.max_lat, d.max_lat)};
  if (!(clipped.min_lon < clipped.max_lon && clipped.min_lat < clipped.max_lat)) {
    throw ArgumentError("bounding box does not intersect the domain");
  }
  const auto cells = geo::cover_rect_interior(clipped, level, d);
  std::vector<HeatCell> out;
  if (cells.empty()) return out;
  if (cells.size() > kMaxRows) throw ArgumentError("heatmap request covers too many cells");

  const auto s = split(filters);
  auto p = plan(s);
  std::optional<std::size_t> attribute;
  if (spec.function != AggregateFunction::Count) attribute = schema.index_of(spec.attribute);
  std::vector<Term> terms;
  std::size_t per_cell = 1;
  if (p) {
    if (level > 0) p->cells = cells;
    per_cell = p->combos.size();
    terms = evaluate(*p, attribute);
  }
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<Term> part;
    if (p) {
      part.assign(terms.begin() + static_cast<std::ptrdiff_t>(c * per_cell),
                  terms.begin() + static_cast<std::ptrdiff_t>((c + 1) * per_cell));
    }
    QueryResult r;
    try {
      r = combine(part, spec);
    } catch (const EmptyResultError&) {
      continue;
    }
    if (spec.function == AggregateFunction::Count && r.estimate < 0.5) continue;
    out.push_back({cells[c], geo::cell_bounds(cells[c], d), r.estimate, r.count});
  }
  return out;
}

}  // namespace deepspace::query
