#include "deepspace/query.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "deepspace/errors.hpp"

namespace deepspace::query {

using nlohmann::json;

namespace {

const json& require(const json& j, const char* key, const char* ctx) {
  if (!j.is_object() || !j.contains(key)) {
    throw ArgumentError(std::string(ctx) + " requires field '" + key + "'");
  }
  return j.at(key);
}

std::string require_string(const json& j, const char* key, const char* ctx) {
  const auto& v = require(j, key, ctx);
  if (!v.is_string()) throw ArgumentError(std::string(ctx) + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

int require_int(const json& j, const char* key, const char* ctx) {
  const auto& v = require(j, key, ctx);
  if (!v.is_number_integer()) throw ArgumentError(std::string(ctx) + ": '" + key + "' must be an integer");
  return v.get<int>();
}

}  // namespace

std::string function_name(AggregateFunction f) {
  switch (f) {
    case AggregateFunction::Count: return "COUNT";
    case AggregateFunction::Mean: return "MEAN";
    case AggregateFunction::Stddev: return "STDDEV";
    case AggregateFunction::Percentile: return "PERCENTILE";
    case AggregateFunction::Sum: return "SUM";
    case AggregateFunction::Min: return "MIN";
    case AggregateFunction::Max: return "MAX";
  }
  return "COUNT";
}

AggregateFunction parse_function(const std::string& name) {
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (auto f : {AggregateFunction::Count, AggregateFunction::Mean, AggregateFunction::Stddev,
                 AggregateFunction::Percentile, AggregateFunction::Sum, AggregateFunction::Min,
                 AggregateFunction::Max}) {
    if (function_name(f) == upper) return f;
  }
  throw ArgumentError("unknown aggregate function '" + name + "'");
}

Predicate parse_predicate(const json& j) {
  if (!j.is_object()) throw ArgumentError("predicate must be an object");
  const std::string type = require_string(j, "type", "predicate");
  if (type == "equals") {
    Equals p;
    p.attribute = require_string(j, "attribute", "equals");
    p.value = require(j, "value", "equals");
    return p;
  }
  if (type == "cell") {
    const std::string tokens = require_string(j, "tokens", "cell");
    return CellContains{geo::Cell::parse(tokens)};
  }
  if (type == "polygon") {
    InPolygon p;
    p.level = require_int(j, "level", "polygon");
    const auto& ring = require(j, "ring", "polygon");
    if (!ring.is_array()) throw ArgumentError("polygon: 'ring' must be an array");
    for (const auto& v : ring) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        throw ArgumentError("polygon: ring vertices must be [lon, lat] pairs");
      }
      p.ring.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    return p;
  }
  if (type == "in_set") {
    InSet p;
    p.attribute = require_string(j, "attribute", "in_set");
    const auto& values = require(j, "values", "in_set");
    if (!values.is_array() || values.empty()) throw ArgumentError("in_set: 'values' must be a non-empty array");
    for (const auto& v : values) p.values.push_back(v);
    return p;
  }
  throw ArgumentError("unknown predicate type '" + type + "'");
}

AggregateSpec parse_aggregate(const json& j) {
  if (!j.is_object()) throw ArgumentError("aggregate must be an object");
  AggregateSpec a;
  a.function = parse_function(require_string(j, "function", "aggregate"));
  if (a.function != AggregateFunction::Count) a.attribute = require_string(j, "attribute", "aggregate");
  if (a.function == AggregateFunction::Percentile) {
    const auto& p = require(j, "p", "aggregate");
    if (!p.is_number()) throw ArgumentError("aggregate: 'p' must be a number");
    a.p = p.get<double>();
    if (!(a.p > 0.0 && a.p < 1.0)) throw ArgumentError("aggregate: 'p' must lie in (0, 1)");
  }
  return a;
}

Query parse_query(const json& j) {
  if (!j.is_object()) throw ArgumentError("query must be a JSON object");
  Query q;
  if (j.contains("predicates")) {
    const auto& preds = j.at("predicates");
    if (!preds.is_array()) throw ArgumentError("'predicates' must be an array");
    for (const auto& p : preds) q.predicates.push_back(parse_predicate(p));
  }
  if (j.contains("aggregate")) q.aggregate = parse_aggregate(j.at("aggregate"));
  return q;
}

json to_json(const Predicate& p) {
  if (const auto* e = std::get_if<Equals>(&p)) {
    return json{{"type", "equals"}, {"attribute", e->attribute}, {"value", e->value}};
  }
  if (const auto* c = std::get_if<CellContains>(&p)) return json{{"type", "cell"}, {"tokens", c->cell.to_string()}};
  if (const auto* poly = std::get_if<InPolygon>(&p)) {
    json ring = json::array();
    for (const auto& v : poly->ring) ring.push_back({v.lon, v.lat});
    return json{{"type", "polygon"}, {"ring", ring}, {"level", poly->level}};
  }
  const auto& s = std::get<InSet>(p);
  return json{{"type", "in_set"}, {"attribute", s.attribute}, {"values", s.values}};
}

json to_json(const AggregateSpec& a) {
  json j{{"function", function_name(a.function)}};
  if (a.function != AggregateFunction::Count) j["attribute"] = a.attribute;
  if (a.function == AggregateFunction::Percentile) j["p"] = a.p;
  return j;
}

json to_json(const Query& q) {
  json preds = json::array();
  for (const auto& p : q.predicates) preds.push_back(to_json(p));
  return json{{"predicates", preds}, {"aggregate", to_json(q.aggregate)}};
}

void validate(const Query& q, const data::AttributeSchema& schema) {
  int spatial = 0;
  std::set<std::string> equals;
  const int levels = schema.geo_levels();
  for (const auto& p : q.predicates) {
    if (const auto* e = std::get_if<Equals>(&p)) {
      const auto a = schema.index_of(e->attribute);
      if (!schema.attribute(a).is_discrete()) {
        throw ArgumentError("equality predicates need a categorical or datetime attribute, got '" + e->attribute + "'");
      }
      if (!equals.insert(e->attribute).second) {
        throw ArgumentError("attribute '" + e->attribute + "' appears in more than one equality predicate");
      }
    } else if (const auto* s = std::get_if<InSet>(&p)) {
      const auto a = schema.index_of(s->attribute);
      if (!schema.attribute(a).is_discrete()) {
        throw ArgumentError("set predicates need a categorical or datetime attribute, got '" + s->attribute + "'");
      }
      if (static_cast<int>(s->values.size()) > schema.attribute(a).cardinality()) {
        throw ArgumentError("set predicate on '" + s->attribute + "' lists more values than categories");
      }
    } else if (const auto* c = std::get_if<CellContains>(&p)) {
      ++spatial;
      if (c->cell.level() > levels) {
        throw ArgumentError("cell level " + std::to_string(c->cell.level()) + " exceeds the model's " +
                            std::to_string(levels) + " geo levels");
      }
    } else {
      const auto& poly = std::get<InPolygon>(p);
      ++spatial;
      if (poly.level < 0 || poly.level > levels) {
        throw ArgumentError("polygon cover level " + std::to_string(poly.level) + " outside [0, " +
                            std::to_string(levels) + "]");
      }
    }
  }
  if (spatial > 1) throw ArgumentError("at most one spatial predicate per query");
  if (q.aggregate.function != AggregateFunction::Count) {
    const auto a = schema.index_of(q.aggregate.attribute);
    if (!schema.attribute(a).is_continuous()) {
      throw ArgumentError("aggregate attribute '" + q.aggregate.attribute + "' is not continuous");
    }
  }
}

}  // namespace deepspace::query
