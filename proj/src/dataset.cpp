#include "deepspace/dataset.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>

#include "deepspace/errors.hpp"

namespace deepspace::data {

int DatetimeParts::get(DatetimeField field) const {
  switch (field) {
    case DatetimeField::DayOfMonth: return day_of_month;
    case DatetimeField::DayOfWeek: return day_of_week;
    case DatetimeField::Hour: return hour;
    case DatetimeField::Month: return month;
  }
  return 0;
}

namespace {

int parse_fixed(std::string_view s, std::size_t pos, std::size_t len, std::string_view whole) {
  if (pos + len > s.size()) throw ParseError("truncated timestamp '" + std::string(whole) + "'");
  int v = 0;
  const char* first = s.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + len, v);
  if (ec != std::errc{} || ptr != first + len) {
    throw ParseError("malformed timestamp '" + std::string(whole) + "'");
  }
  return v;
}

void expect(std::string_view s, std::size_t pos, char c, std::string_view whole) {
  if (pos >= s.size() || s[pos] != c) throw ParseError("malformed timestamp '" + std::string(whole) + "'");
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first == last) return false;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last && std::isfinite(out);
}

}  // namespace

DatetimeParts derive_datetime(std::string_view ts) {
  std::string_view s = ts;
  while (!s.empty() && (s.back() == 'Z' || s.back() == ' ')) s.remove_suffix(1);
  const int year = parse_fixed(s, 0, 4, ts);
  expect(s, 4, '-', ts);
  const int month = parse_fixed(s, 5, 2, ts);
  expect(s, 7, '-', ts);
  const int day = parse_fixed(s, 8, 2, ts);
  if (s.size() < 11 || (s[10] != 'T' && s[10] != ' ')) throw ParseError("malformed timestamp '" + std::string(ts) + "'");
  const int hour = parse_fixed(s, 11, 2, ts);
  expect(s, 13, ':', ts);
  const int minute = parse_fixed(s, 14, 2, ts);
  int second = 0;
  if (s.size() > 16) {
    expect(s, 16, ':', ts);
    second = parse_fixed(s, 17, 2, ts);
    if (s.size() > 19) {
      expect(s, 19, '.', ts);
      for (std::size_t i = 20; i < s.size(); ++i) {
        if (s[i] < '0' || s[i] > '9') throw ParseError("malformed timestamp '" + std::string(ts) + "'");
      }
    }
  }
  if (hour > 23 || minute > 59 || second > 60) throw ParseError("invalid time of day in '" + std::string(ts) + "'");

  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) throw ParseError("invalid calendar date in '" + std::string(ts) + "'");
  DatetimeParts parts;
  parts.day_of_month = day;
  parts.month = month;
  parts.hour = hour;
  parts.day_of_week = static_cast<int>(weekday{sys_days{ymd}}.iso_encoding());
  return parts;
}

double ContinuousStats::transform(double raw) const { return log_transform ? std::log(raw) : raw; }

double ContinuousStats::standardize(double raw) const { return (transform(raw) - mean) / stddev; }

EncodedDataset::EncodedDataset(AttributeSchema schema) : schema_(std::move(schema)) {
  codes_.resize(schema_.size());
  values_.resize(schema_.size());
  stats_.resize(schema_.size());
  for (std::size_t a = 0; a < schema_.size(); ++a) {
    const auto& attr = schema_.attribute(a);
    if (attr.is_continuous()) stats_[a].log_transform = attr.continuous().head == HeadType::LogNormal;
  }
}

void EncodedDataset::append(const RawRow& row) {
  for (std::size_t a = 0; a < schema_.size(); ++a) {
    const auto& attr = schema_.attribute(a);
    if (attr.is_discrete()) {
      codes_[a].push_back(static_cast<std::uint16_t>(row.codes.at(a)));
    } else if (attr.is_continuous()) {
      values_[a].push_back(row.values.at(a));
    }
  }
  const int levels = schema_.geo_levels();
  if (row.cell.level() != levels) throw ArgumentError("row cell must be at the schema's geo level");
  geo_.push_back(row.cell.curve_index());
  locations_.push_back(row.location);
}

void EncodedDataset::compute_stats() {
  for (std::size_t a = 0; a < schema_.size(); ++a) {
    if (!schema_.attribute(a).is_continuous()) continue;
    auto& st = stats_[a];
    const auto& vals = values_[a];
    double sum = 0.0;
    for (double v : vals) sum += st.transform(v);
    st.mean = vals.empty() ? 0.0 : sum / static_cast<double>(vals.size());
    double sq = 0.0;
    for (double v : vals) {
      const double d = st.transform(v) - st.mean;
      sq += d * d;
    }
    st.stddev = vals.empty() ? 1.0 : std::sqrt(sq / static_cast<double>(vals.size()));
    if (!(st.stddev > 0.0)) st.stddev = 1.0;
  }
}

geo::Cell EncodedDataset::cell(std::size_t row, int level) const {
  return geo::Cell(schema_.geo_levels(), geo_[row]).ancestor(level);
}

RawRow EncodedDataset::row(std::size_t r) const {
  RawRow out;
  out.codes.assign(schema_.size(), -1);
  out.values.assign(schema_.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t a = 0; a < schema_.size(); ++a) {
    const auto& attr = schema_.attribute(a);
    if (attr.is_discrete()) out.codes[a] = codes_[a][r];
    if (attr.is_continuous()) out.values[a] = values_[a][r];
  }
  out.cell = geo::Cell(schema_.geo_levels(), geo_[r]);
  out.location = locations_[r];
  return out;
}

bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      break;
    } else if (c == '\n') {
      break;
    } else {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

EncodedDataset load_csv(std::istream& in, const AttributeSchema& schema) {
  std::vector<std::string> header;
  if (!read_csv_record(in, header)) throw DataError("CSV input is empty (header row required)");
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ConfigError("CSV is missing mapped column '" + name + "'");
  };
  std::vector<std::vector<std::size_t>> cols(schema.size());
  for (std::size_t a = 0; a < schema.size(); ++a) {
    for (const auto& name : schema.attribute(a).columns) cols[a].push_back(column(name));
  }

  EncodedDataset ds(schema);
  const auto& domain = schema.domain();
  const int levels = schema.geo_levels();
  std::vector<std::string> fields;
  RawRow row;
  row.codes.assign(schema.size(), -1);
  row.values.assign(schema.size(), std::numeric_limits<double>::quiet_NaN());
  while (read_csv_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    enum class Outcome { Ok, Parse, Domain, Category, Invalid } outcome = Outcome::Ok;
    for (std::size_t a = 0; a < schema.size() && outcome == Outcome::Ok; ++a) {
      const auto& attr = schema.attribute(a);
      bool missing = false;
      for (auto c : cols[a]) missing |= c >= fields.size();
      if (missing) {
        outcome = Outcome::Parse;
        break;
      }
      if (const auto* cat = std::get_if<CategoricalKind>(&attr.kind)) {
        const auto& v = fields[cols[a][0]];
        int code = -1;
        for (std::size_t k = 0; k < cat->labels.size(); ++k) {
          if (cat->labels[k] == v) code = static_cast<int>(k);
        }
        if (code < 0) outcome = Outcome::Category;
        row.codes[a] = code;
      } else if (const auto* dt = std::get_if<DatetimeKind>(&attr.kind)) {
        try {
          row.codes[a] = derive_datetime(fields[cols[a][0]]).get(dt->field) - datetime_offset(dt->field);
        } catch (const ParseError&) {
          outcome = Outcome::Parse;
        }
      } else if (attr.is_geo()) {
        geo::GeoPoint p;
        if (!parse_double(fields[cols[a][0]], p.lon) || !parse_double(fields[cols[a][1]], p.lat)) {
          outcome = Outcome::Parse;
        } else if (!domain.contains(p)) {
          outcome = Outcome::Domain;
        } else {
          row.location = p;
          row.cell = geo::encode(p, levels, domain);
        }
      } else {
        const auto& k = attr.continuous();
        double v;
        if (!parse_double(fields[cols[a][0]], v)) {
          outcome = Outcome::Parse;
        } else if ((k.head == HeadType::LogNormal && !(v > 0.0)) ||
                   (k.head == HeadType::Pareto && v < k.pareto_beta)) {
          outcome = Outcome::Invalid;
        }
        row.values[a] = v;
      }
    }
    switch (outcome) {
      case Outcome::Ok: ds.append(row); break;
      case Outcome::Parse: ++ds.drops.parse_errors; break;
      case Outcome::Domain: ++ds.drops.out_of_domain; break;
      case Outcome::Category: ++ds.drops.unknown_category; break;
      case Outcome::Invalid: ++ds.drops.invalid_value; break;
    }
  }
  if (ds.size() == 0) throw DataError("no valid rows after ingestion");
  ds.compute_stats();
  return ds;
}

EncodedDataset load_csv(const std::string& path, const AttributeSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return load_csv(in, schema);
}

nn::Vector encode_row(const RawRow& row, const AttributeSchema& schema, std::span<const ContinuousStats> stats) {
  nn::Vector out = nn::Vector::Zero(schema.input_width());
  Eigen::Index offset = 0;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    const auto& attr = schema.attribute(a);
    if (attr.is_discrete()) {
      out[offset + row.codes.at(a)] = 1.0;
    } else if (attr.is_geo()) {
      for (int l = 0; l < attr.geo_levels(); ++l) out[offset + 4 * l + row.cell.token(l)] = 1.0;
    } else {
      out[offset] = stats[a].standardize(row.values.at(a));
    }
    offset += attr.input_width();
  }
  return out;
}

}  // namespace deepspace::data
