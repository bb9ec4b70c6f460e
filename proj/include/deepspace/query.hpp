#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "deepspace/geocell.hpp"
#include "deepspace/schema.hpp"

namespace deepspace::query {

struct Equals {
  std::string attribute;
  nlohmann::json value;  // label string or datetime field value
};
struct CellContains {
  geo::Cell cell;
};
struct InPolygon {
  std::vector<geo::GeoPoint> ring;
  int level = 0;
};
struct InSet {
  std::string attribute;
  std::vector<nlohmann::json> values;
};
using Predicate = std::variant<Equals, CellContains, InPolygon, InSet>;

enum class AggregateFunction { Count, Mean, Stddev, Percentile, Sum, Min, Max };

struct AggregateSpec {
  AggregateFunction function = AggregateFunction::Count;
  std::string attribute;  // continuous attribute; unused for COUNT
  double p = 0.5;         // PERCENTILE only
};

struct Query {
  std::vector<Predicate> predicates;
  AggregateSpec aggregate;
};

std::string function_name(AggregateFunction f);
/// Case-insensitive. Throws ArgumentError for an unknown name.
AggregateFunction parse_function(const std::string& name);

/// Parses {"predicates": [...], "aggregate": {...}}. Throws ArgumentError for shape violations.
/// Predicate objects: {"type":"equals","attribute","value"}, {"type":"cell","tokens":"0213"},
/// {"type":"polygon","ring":[[lon,lat],...],"level"}, {"type":"in_set","attribute","values":[...]}.
Query parse_query(const nlohmann::json& j);
Predicate parse_predicate(const nlohmann::json& j);
AggregateSpec parse_aggregate(const nlohmann::json& j);
nlohmann::json to_json(const Query& q);
nlohmann::json to_json(const Predicate& p);
nlohmann::json to_json(const AggregateSpec& a);

/// Structural checks against a schema: known attributes, one spatial predicate at most, distinct
/// Equals attributes, spatial levels within the geo levels, aggregate attribute continuous.
/// Throws ArgumentError.
void validate(const Query& q, const data::AttributeSchema& schema);

}  // namespace deepspace::query
