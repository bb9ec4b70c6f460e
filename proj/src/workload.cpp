#include <algorithm>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include "deepspace/errors.hpp"
#include "deepspace/evaluation.hpp"

namespace deepspace::eval {

using nlohmann::json;

namespace {

bool is_day_pair(const std::string& a, const std::string& b) {
  return (a == "day_of_month" && b == "day_of_week") || (a == "day_of_week" && b == "day_of_month");
}

// Day of month and day of week must never be combined, whatever the attributes are called.
bool conflicting(const data::AttributeSpec& a, const data::AttributeSpec& b) {
  const auto* da = std::get_if<data::DatetimeKind>(&a.kind);
  const auto* db = std::get_if<data::DatetimeKind>(&b.kind);
  if (da && db) {
    const auto x = da->field;
    const auto y = db->field;
    if ((x == data::DatetimeField::DayOfMonth && y == data::DatetimeField::DayOfWeek) ||
        (x == data::DatetimeField::DayOfWeek && y == data::DatetimeField::DayOfMonth)) {
      return true;
    }
  }
  return is_day_pair(a.name, b.name);
}

}  // namespace

WorkloadConfig WorkloadConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("workload config must be a JSON object");
  WorkloadConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "min_level") {
        c.min_level = value.get<int>();
      } else if (key == "max_level") {
        c.max_level = value.get<int>();
      } else if (key == "geo_queries") {
        c.geo_queries = value.get<std::size_t>();
      } else if (key == "predicate_queries") {
        c.predicate_queries = value.get<std::size_t>();
      } else if (key == "extra_equals_attribute") {
        c.extra_equals_attribute = value.get<std::string>();
      } else if (key == "predicate_attributes") {
        c.predicate_attributes = value.get<std::vector<std::string>>();
      } else {
        throw ConfigError("unknown workload config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("workload config: ") + e.what());
  }
  if (c.min_level < 0 || c.max_level < c.min_level) throw ConfigError("workload levels must satisfy 0 <= min <= max");
  return c;
}

json WorkloadConfig::to_json() const {
  return json{{"min_level", min_level},
              {"max_level", max_level},
              {"geo_queries", geo_queries},
              {"predicate_queries", predicate_queries},
              {"extra_equals_attribute", extra_equals_attribute},
              {"predicate_attributes", predicate_attributes}};
}

Workload generate_workload(const data::EncodedDataset& ds, const WorkloadConfig& config, std::uint64_t seed) {
  if (ds.size() == 0) throw DataError("cannot generate a workload from an empty dataset");
  const auto& schema = ds.schema();
  if (config.max_level > schema.geo_levels() || config.min_level < 0 || config.min_level > config.max_level) {
    throw ConfigError("workload levels must lie within [0, " + std::to_string(schema.geo_levels()) + "]");
  }
  std::optional<std::size_t> extra;
  if (!config.extra_equals_attribute.empty()) {
    extra = schema.index_of(config.extra_equals_attribute);
    if (!schema.attribute(*extra).is_discrete()) throw ConfigError("extra equality attribute must be discrete");
  }
  std::vector<std::size_t> candidates;
  if (config.predicate_attributes.empty()) {
    for (std::size_t a = 0; a < schema.size(); ++a) {
      if (std::holds_alternative<data::DatetimeKind>(schema.attribute(a).kind) && a != extra) {
        candidates.push_back(a);
      }
    }
  } else {
    for (const auto& name : config.predicate_attributes) {
      const auto a = schema.index_of(name);
      if (!schema.attribute(a).is_discrete()) throw ConfigError("predicate attribute '" + name + "' is not discrete");
      candidates.push_back(a);
    }
  }
  if (config.predicate_queries > 0 && candidates.empty()) {
    throw ConfigError("predicate queries requested but no datetime attribute is available");
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> row_dist(0, ds.size() - 1);
  std::uniform_int_distribution<int> level_dist(config.min_level, config.max_level);
  const auto equals_from_row = [&](std::size_t a, std::size_t row) {
    return query::Equals{schema.attribute(a).name, schema.discrete_value(a, ds.code(row, a))};
  };

  Workload w;
  const std::size_t total = config.geo_queries + config.predicate_queries;
  for (std::size_t i = 0; i < total; ++i) {
    const bool with_predicates = i >= config.geo_queries;
    const std::size_t row = row_dist(rng);
    const int level = level_dist(rng);
    WorkloadQuery wq;
    wq.level = level;
    wq.query.predicates.push_back(query::CellContains{ds.cell(row, level)});
    if (extra) {
      wq.query.predicates.push_back(equals_from_row(*extra, row));
      ++wq.predicate_count;
    }
    if (with_predicates) {
      std::vector<std::size_t> pool = candidates;
      const int want = std::min<int>(static_cast<int>(pool.size()), std::uniform_int_distribution<int>(1, 2)(rng));
      std::vector<std::size_t> chosen;
      while (static_cast<int>(chosen.size()) < want && !pool.empty()) {
        const std::size_t k = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
        const std::size_t a = pool[k];
        chosen.push_back(a);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
        pool.erase(std::remove_if(pool.begin(), pool.end(),
                                  [&](std::size_t b) { return conflicting(schema.attribute(a), schema.attribute(b)); }),
                   pool.end());
      }
      std::sort(chosen.begin(), chosen.end());
      for (auto a : chosen) {
        wq.query.predicates.push_back(equals_from_row(a, row));
        ++wq.predicate_count;
      }
    }
    w.push_back(std::move(wq));
  }

  // Exact truths: one scan over the rows, testing every query.
  std::vector<RowMatcher> matchers;
  matchers.reserve(w.size());
  for (const auto& wq : w) matchers.emplace_back(ds, wq.query.predicates);
  std::vector<double> counts(w.size(), 0.0);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t q = 0; q < w.size(); ++q) {
      if (matchers[q](r)) counts[q] += 1.0;
    }
  }
  for (std::size_t q = 0; q < w.size(); ++q) w[q].truth = counts[q];
  return w;
}

void save_workload(std::ostream& out, const Workload& w) {
  for (const auto& wq : w) {
    json j{{"query", query::to_json(wq.query)},
           {"truth", wq.truth},
           {"level", wq.level},
           {"predicate_count", wq.predicate_count}};
    out << j.dump() << '\n';
  }
}

Workload load_workload(std::istream& in) {
  Workload w;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      WorkloadQuery wq;
      wq.query = query::parse_query(j.at("query"));
      wq.truth = j.at("truth").get<double>();
      wq.level = j.value("level", 0);
      wq.predicate_count = j.value("predicate_count", 0);
      w.push_back(std::move(wq));
    } catch (const json::exception& e) {
      throw ParseError("workload line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ArgumentError& e) {
      throw ParseError("workload line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return w;
}

}  // namespace deepspace::eval
