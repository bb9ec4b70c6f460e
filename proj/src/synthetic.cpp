#include "deepspace/synthetic.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <sstream>

#include "deepspace/math.hpp"

namespace deepspace::synth {

namespace {

struct Cluster {
  double lon, lat;
  double sigma_lon, sigma_lat;
  double weight;
  std::array<double, 24> hourly;
  double weekday, weekend;
  double fare_mean, fare_sd;
};

// clang-format off
const std::array<Cluster, 5> kClusters = {{
  // Midtown: commuter peaks, weekday heavy.
  {-73.985, 40.755, 0.012, 0.010, 0.35,
   {0.3, 0.2, 0.15, 0.1, 0.1, 0.2, 0.5, 1.2, 1.6, 1.5, 1.0, 1.0, 1.1, 1.0, 1.0, 1.1, 1.3, 1.6, 1.7, 1.4, 1.0, 0.8, 0.6, 0.4},
   1.3, 0.6, 14.0, 4.0},
  // Downtown: office hours only.
  {-74.008, 40.712, 0.006, 0.005, 0.15,
   {0.1, 0.05, 0.05, 0.05, 0.05, 0.1, 0.3, 0.9, 1.8, 1.7, 1.2, 1.1, 1.3, 1.2, 1.0, 1.0, 1.2, 1.5, 1.4, 0.8, 0.5, 0.3, 0.2, 0.1},
   1.5, 0.4, 16.0, 5.0},
  // Airport east: afternoon and evening arrivals.
  {-73.785, 40.645, 0.004, 0.003, 0.12,
   {0.6, 0.3, 0.2, 0.2, 0.3, 0.5, 0.8, 1.0, 1.0, 1.0, 1.0, 1.1, 1.2, 1.3, 1.5, 1.6, 1.5, 1.4, 1.2, 1.2, 1.3, 1.2, 1.0, 0.8},
   1.0, 1.1, 52.0, 6.0},
  // Airport north: early departures and evening returns.
  {-73.872, 40.774, 0.003, 0.002, 0.08,
   {0.1, 0.05, 0.05, 0.1, 0.5, 1.2, 1.5, 1.5, 1.2, 1.0, 0.9, 0.9, 1.0, 1.0, 1.1, 1.3, 1.4, 1.4, 1.3, 1.2, 1.0, 0.7, 0.4, 0.2},
   1.2, 0.8, 35.0, 5.0},
  // Brooklyn nightlife: late hours, weekend heavy.
  {-73.957, 40.714, 0.015, 0.012, 0.30,
   {1.6, 1.5, 1.2, 0.8, 0.4, 0.2, 0.2, 0.3, 0.4, 0.4, 0.5, 0.5, 0.6, 0.6, 0.6, 0.7, 0.8, 0.9, 1.0, 1.2, 1.5, 1.7, 1.8, 1.8},
   0.7, 1.7, 18.0, 6.0},
}};
// clang-format on

// Portable sampling primitives so the generated data does not depend on the standard library's
// distribution implementations.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal(std::mt19937_64& rng) {
  double u = uniform01(rng);
  while (u <= 0.0) u = uniform01(rng);
  const double v = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * math::kPi * v);
}

template <typename Weights>
std::size_t pick(std::mt19937_64& rng, const Weights& w) {
  double total = 0.0;
  for (double x : w) total += x;
  double r = uniform01(rng) * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    r -= w[i];
    if (r < 0.0) return i;
  }
  return w.size() - 1;
}

}  // namespace

void write_csv(std::ostream& out, const SyntheticConfig& config) {
  using namespace std::chrono;
  std::mt19937_64 rng(config.seed);
  out << "pickup_datetime,pickup_longitude,pickup_latitude,total_amount\n";
  std::array<double, 5> base{};
  for (std::size_t c = 0; c < kClusters.size(); ++c) base[c] = kClusters[c].weight;

  const std::size_t n_months = config.months.size();
  char line[128];
  for (std::size_t i = 0; i < config.rows; ++i) {
    const int month = config.months[i * n_months / config.rows];
    const year_month ym{std::chrono::year{config.year}, std::chrono::month{static_cast<unsigned>(month)}};
    const unsigned days = static_cast<unsigned>((ym / last).day());

    const auto& cl = kClusters[pick(rng, base)];
    const int hour = static_cast<int>(pick(rng, cl.hourly));
    std::vector<double> day_weights(days);
    for (unsigned d = 0; d < days; ++d) {
      const unsigned iso = weekday{sys_days{ym / std::chrono::day{d + 1}}}.iso_encoding();
      day_weights[d] = iso >= 6 ? cl.weekend : cl.weekday;
    }
    const int day = static_cast<int>(pick(rng, day_weights)) + 1;

    // The commuter cluster drifts over the day.
    double lon_center = cl.lon;
    double lat_center = cl.lat;
    if (&cl == &kClusters[0]) {
      lon_center += 0.004 * std::cos(2.0 * math::kPi * hour / 24.0);
      lat_center += 0.003 * std::sin(2.0 * math::kPi * hour / 24.0);
    }
    const double lon = lon_center + cl.sigma_lon * normal(rng);
    const double lat = lat_center + cl.sigma_lat * normal(rng);
    const double night = (hour < 6) ? 1.15 : 1.0;
    const double fare = std::max(2.5, cl.fare_mean * night + cl.fare_sd * normal(rng));
    const int minute = static_cast<int>(uniform01(rng) * 60.0);
    const int second = static_cast<int>(uniform01(rng) * 60.0);

    std::snprintf(line, sizeof(line), "%04d-%02d-%02d %02d:%02d:%02d,%.6f,%.6f,%.2f\n", config.year, month, day,
                  hour, minute, second, lon, lat, fare);
    out << line;
  }
}

geo::Domain synthetic_domain() { return geo::Domain{-120.0, 0.0, -30.0, 90.0, geo::kMaxLevel}; }

data::AttributeSchema synthetic_schema(int geo_levels, bool with_month) {
  using namespace data;
  std::vector<AttributeSpec> attrs;
  attrs.push_back({"day_of_month", DatetimeKind{DatetimeField::DayOfMonth}, {"pickup_datetime"}});
  attrs.push_back({"day_of_week", DatetimeKind{DatetimeField::DayOfWeek}, {"pickup_datetime"}});
  attrs.push_back({"hour", DatetimeKind{DatetimeField::Hour}, {"pickup_datetime"}});
  if (with_month) attrs.push_back({"month", DatetimeKind{DatetimeField::Month}, {"pickup_datetime"}});
  attrs.push_back({"pickup", GeoKind{geo_levels}, {"pickup_longitude", "pickup_latitude"}});
  attrs.push_back({"fare", ContinuousKind{HeadType::Gaussian, 1, 0.0}, {"total_amount"}});
  return AttributeSchema(std::move(attrs), synthetic_domain());
}

data::AttributeSchema reference_schema() { return synthetic_schema(16, false); }

data::EncodedDataset generate(const SyntheticConfig& config, const data::AttributeSchema& schema) {
  std::stringstream csv;
  write_csv(csv, config);
  return data::load_csv(csv, schema);
}

}  // namespace deepspace::synth
