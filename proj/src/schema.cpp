#include "deepspace/schema.hpp"

#include <fstream>
#include <set>

#include "deepspace/errors.hpp"

namespace deepspace::data {

using nlohmann::json;

bool AttributeSpec::is_discrete() const {
  return std::holds_alternative<CategoricalKind>(kind) || std::holds_alternative<DatetimeKind>(kind);
}

int AttributeSpec::cardinality() const {
  if (const auto* c = std::get_if<CategoricalKind>(&kind)) return static_cast<int>(c->labels.size());
  if (const auto* d = std::get_if<DatetimeKind>(&kind)) return datetime_cardinality(d->field);
  if (is_geo()) return 4;
  throw ArgumentError("attribute '" + name + "' is continuous and has no cardinality");
}

int AttributeSpec::input_width() const {
  if (is_discrete()) return cardinality();
  if (const auto* g = std::get_if<GeoKind>(&kind)) return 4 * g->levels;
  return 1;
}

int AttributeSpec::geo_levels() const {
  if (const auto* g = std::get_if<GeoKind>(&kind)) return g->levels;
  throw ArgumentError("attribute '" + name + "' is not geospatial");
}

const ContinuousKind& AttributeSpec::continuous() const {
  if (const auto* c = std::get_if<ContinuousKind>(&kind)) return *c;
  throw ArgumentError("attribute '" + name + "' is not continuous");
}

int datetime_cardinality(DatetimeField field) {
  switch (field) {
    case DatetimeField::DayOfMonth: return 31;
    case DatetimeField::DayOfWeek: return 7;
    case DatetimeField::Hour: return 24;
    case DatetimeField::Month: return 12;
  }
  return 0;
}

int datetime_offset(DatetimeField field) { return field == DatetimeField::Hour ? 0 : 1; }

std::string datetime_field_name(DatetimeField field) {
  switch (field) {
    case DatetimeField::DayOfMonth: return "day_of_month";
    case DatetimeField::DayOfWeek: return "day_of_week";
    case DatetimeField::Hour: return "hour";
    case DatetimeField::Month: return "month";
  }
  return "";
}

DatetimeField parse_datetime_field(const std::string& name) {
  if (name == "day_of_month") return DatetimeField::DayOfMonth;
  if (name == "day_of_week") return DatetimeField::DayOfWeek;
  if (name == "hour") return DatetimeField::Hour;
  if (name == "month") return DatetimeField::Month;
  throw ConfigError("unknown datetime field '" + name + "'");
}

AttributeSchema::AttributeSchema(std::vector<AttributeSpec> attributes, geo::Domain domain)
    : attributes_(std::move(attributes)), domain_(domain) {
  validate();
}

void AttributeSchema::validate() {
  try {
    domain_.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  std::set<std::string> names;
  int geo_count = 0;
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    const auto& a = attributes_[i];
    if (a.name.empty()) throw ConfigError("attribute names must be non-empty");
    if (!names.insert(a.name).second) throw ConfigError("duplicate attribute name '" + a.name + "'");
    if (const auto* c = std::get_if<CategoricalKind>(&a.kind)) {
      if (c->labels.size() < 2) throw ConfigError("categorical '" + a.name + "' needs at least 2 categories");
      if (std::set<std::string>(c->labels.begin(), c->labels.end()).size() != c->labels.size()) {
        throw ConfigError("categorical '" + a.name + "' has duplicate categories");
      }
      if (c->labels.size() > 65535) throw ConfigError("categorical '" + a.name + "' has too many categories");
    }
    if (const auto* g = std::get_if<GeoKind>(&a.kind)) {
      if (g->levels < 1 || g->levels > domain_.max_level) {
        throw ConfigError("geo '" + a.name + "' levels must be in [1, domain.max_level]");
      }
      ++geo_count;
      geo_index_ = i;
    }
    if (const auto* c = std::get_if<ContinuousKind>(&a.kind)) {
      if (c->components < 1) throw ConfigError("continuous '" + a.name + "' needs >= 1 component");
      if (c->head == HeadType::LogNormal && c->components != 1) {
        throw ConfigError("lognormal head of '" + a.name + "' supports a single component");
      }
      if (c->head == HeadType::Pareto && !(c->pareto_beta > 0.0)) {
        throw ConfigError("pareto head of '" + a.name + "' needs beta > 0");
      }
    }
  }
  if (geo_count != 1) throw ConfigError("schema must contain exactly one geo attribute");
}

namespace {

std::string require_string(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw ConfigError(ctx + ": missing string key '" + key + "'");
  }
  return j.at(key).get<std::string>();
}

}  // namespace

AttributeSchema AttributeSchema::from_json(const json& j) {
  try {
    geo::Domain domain;
    const auto& d = j.at("domain");
    domain.min_lon = d.at("min_lon").get<double>();
    domain.min_lat = d.at("min_lat").get<double>();
    domain.max_lon = d.at("max_lon").get<double>();
    domain.max_lat = d.at("max_lat").get<double>();
    domain.max_level = d.value("max_level", geo::kMaxLevel);

    std::vector<AttributeSpec> attrs;
    for (const auto& a : j.at("attributes")) {
      AttributeSpec spec;
      spec.name = require_string(a, "name", "attribute");
      const std::string type = require_string(a, "type", spec.name);
      if (type == "categorical") {
        CategoricalKind k;
        for (const auto& label : a.at("categories")) {
          k.labels.push_back(label.is_string() ? label.get<std::string>() : label.dump());
        }
        spec.kind = k;
        spec.columns = {a.value("column", spec.name)};
      } else if (type == "datetime") {
        spec.kind = DatetimeKind{parse_datetime_field(require_string(a, "field", spec.name))};
        spec.columns = {require_string(a, "column", spec.name)};
      } else if (type == "geo") {
        spec.kind = GeoKind{a.at("levels").get<int>()};
        spec.columns = {require_string(a, "lon_column", spec.name), require_string(a, "lat_column", spec.name)};
      } else if (type == "continuous") {
        ContinuousKind k;
        const json head = a.value("head", json{{"type", "gaussian"}});
        const std::string head_type = head.value("type", "gaussian");
        if (head_type == "gaussian") {
          k.head = HeadType::Gaussian;
          k.components = head.value("components", 1);
        } else if (head_type == "lognormal") {
          k.head = HeadType::LogNormal;
        } else if (head_type == "pareto") {
          k.head = HeadType::Pareto;
          k.pareto_beta = head.at("beta").get<double>();
        } else {
          throw ConfigError("unknown head type '" + head_type + "'");
        }
        spec.kind = k;
        spec.columns = {a.value("column", spec.name)};
      } else {
        throw ConfigError("unknown attribute type '" + type + "'");
      }
      attrs.push_back(std::move(spec));
    }
    return AttributeSchema(std::move(attrs), domain);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
}

AttributeSchema AttributeSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("schema file '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json AttributeSchema::to_json() const {
  json attrs = json::array();
  for (const auto& a : attributes_) {
    json o{{"name", a.name}};
    if (const auto* c = std::get_if<CategoricalKind>(&a.kind)) {
      o["type"] = "categorical";
      o["categories"] = c->labels;
      o["column"] = a.columns.at(0);
    } else if (const auto* d = std::get_if<DatetimeKind>(&a.kind)) {
      o["type"] = "datetime";
      o["field"] = datetime_field_name(d->field);
      o["column"] = a.columns.at(0);
    } else if (const auto* g = std::get_if<GeoKind>(&a.kind)) {
      o["type"] = "geo";
      o["levels"] = g->levels;
      o["lon_column"] = a.columns.at(0);
      o["lat_column"] = a.columns.at(1);
    } else {
      const auto& k = std::get<ContinuousKind>(a.kind);
      o["type"] = "continuous";
      o["column"] = a.columns.at(0);
      switch (k.head) {
        case HeadType::Gaussian: o["head"] = {{"type", "gaussian"}, {"components", k.components}}; break;
        case HeadType::LogNormal: o["head"] = {{"type", "lognormal"}}; break;
        case HeadType::Pareto: o["head"] = {{"type", "pareto"}, {"beta", k.pareto_beta}}; break;
      }
    }
    attrs.push_back(std::move(o));
  }
  return {{"domain",
           {{"min_lon", domain_.min_lon},
            {"min_lat", domain_.min_lat},
            {"max_lon", domain_.max_lon},
            {"max_lat", domain_.max_lat},
            {"max_level", domain_.max_level}}},
          {"attributes", std::move(attrs)}};
}

std::optional<std::size_t> AttributeSchema::find(const std::string& name) const {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    if (attributes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t AttributeSchema::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw ArgumentError("unknown attribute '" + name + "'");
}

int AttributeSchema::input_width() const {
  int w = 0;
  for (const auto& a : attributes_) w += a.input_width();
  return w;
}

std::optional<int> AttributeSchema::discrete_code(std::size_t attribute, const json& value) const {
  const auto& a = attributes_.at(attribute);
  if (const auto* c = std::get_if<CategoricalKind>(&a.kind)) {
    std::string label;
    if (value.is_string()) {
      label = value.get<std::string>();
    } else if (value.is_number_integer()) {
      label = value.dump();
    } else {
      throw ArgumentError("value for '" + a.name + "' must be a category label");
    }
    for (std::size_t k = 0; k < c->labels.size(); ++k) {
      if (c->labels[k] == label) return static_cast<int>(k);
    }
    return std::nullopt;
  }
  if (const auto* d = std::get_if<DatetimeKind>(&a.kind)) {
    if (!value.is_number_integer()) throw ArgumentError("value for '" + a.name + "' must be an integer");
    const int code = value.get<int>() - datetime_offset(d->field);
    if (code < 0 || code >= datetime_cardinality(d->field)) return std::nullopt;
    return code;
  }
  throw ArgumentError("attribute '" + a.name + "' is not categorical or datetime");
}

json AttributeSchema::discrete_value(std::size_t attribute, int code) const {
  const auto& a = attributes_.at(attribute);
  if (const auto* c = std::get_if<CategoricalKind>(&a.kind)) return c->labels.at(static_cast<std::size_t>(code));
  if (const auto* d = std::get_if<DatetimeKind>(&a.kind)) return code + datetime_offset(d->field);
  throw ArgumentError("attribute '" + a.name + "' is not categorical or datetime");
}

}  // namespace deepspace::data
