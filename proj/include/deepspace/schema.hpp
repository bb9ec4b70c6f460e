#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "deepspace/geocell.hpp"

namespace deepspace::data {

enum class DatetimeField { DayOfMonth, DayOfWeek, Hour, Month };

struct CategoricalKind {
  std::vector<std::string> labels;
};

/// A discrete field extracted from a timestamp column. Day of week uses ISO numbering (Mon = 1).
struct DatetimeKind {
  DatetimeField field = DatetimeField::Hour;
};

/// Pickup-style location, modelled as `levels` chained Cat(4) digits.
struct GeoKind {
  int levels = 1;
};

enum class HeadType { Gaussian, LogNormal, Pareto };

struct ContinuousKind {
  HeadType head = HeadType::Gaussian;
  int components = 1;        // Gaussian mixture size; 1 for LogNormal
  double pareto_beta = 0.0;  // Pareto scale, must be below every observed value
};

using AttributeKind = std::variant<CategoricalKind, DatetimeKind, GeoKind, ContinuousKind>;

struct AttributeSpec {
  std::string name;
  AttributeKind kind;
  /// CSV columns feeding the attribute: one column, or lon and lat for geo.
  std::vector<std::string> columns;

  bool is_discrete() const;
  bool is_geo() const { return std::holds_alternative<GeoKind>(kind); }
  bool is_continuous() const { return std::holds_alternative<ContinuousKind>(kind); }
  /// Number of categories of a categorical or datetime attribute (4 for geo digits).
  int cardinality() const;
  int input_width() const;
  int geo_levels() const;
  const ContinuousKind& continuous() const;
};

int datetime_cardinality(DatetimeField field);
/// Smallest valid raw value of the field (1 for day/month fields, 0 for hour).
int datetime_offset(DatetimeField field);
std::string datetime_field_name(DatetimeField field);
DatetimeField parse_datetime_field(const std::string& name);

/// Ordered attribute list with exactly one geo attribute. The order is the canonical attribute
/// order and is serialized with the model.
class AttributeSchema {
 public:
  AttributeSchema() = default;
  AttributeSchema(std::vector<AttributeSpec> attributes, geo::Domain domain);

  static AttributeSchema from_json(const nlohmann::json& j);
  static AttributeSchema load(const std::string& path);
  nlohmann::json to_json() const;

  const std::vector<AttributeSpec>& attributes() const { return attributes_; }
  const AttributeSpec& attribute(std::size_t i) const { return attributes_.at(i); }
  std::size_t size() const { return attributes_.size(); }
  const geo::Domain& domain() const { return domain_; }
  std::size_t geo_index() const { return geo_index_; }
  const AttributeSpec& geo() const { return attributes_[geo_index_]; }
  int geo_levels() const { return geo().geo_levels(); }
  std::optional<std::size_t> find(const std::string& name) const;
  /// Throws ArgumentError for an unknown attribute.
  std::size_t index_of(const std::string& name) const;
  int input_width() const;

  /// Code (0-based category index) of a raw discrete value given as JSON: a label string for
  /// categorical attributes, the field value for datetime attributes. Returns nullopt for values
  /// outside the attribute's domain. Throws ArgumentError for non-discrete attributes or values of
  /// the wrong JSON type.
  std::optional<int> discrete_code(std::size_t attribute, const nlohmann::json& value) const;
  /// Inverse of discrete_code.
  nlohmann::json discrete_value(std::size_t attribute, int code) const;

 private:
  void validate();

  std::vector<AttributeSpec> attributes_;
  geo::Domain domain_;
  std::size_t geo_index_ = 0;
};

}  // namespace deepspace::data
