#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "deepspace/dataset.hpp"
#include "deepspace/schema.hpp"

namespace deepspace::synth {

/// Taxi-like point events: five spatial Gaussian clusters whose intensities depend on hour and day
/// of week, with a cluster- and hour-dependent fare.
struct SyntheticConfig {
  std::size_t rows = 200000;
  std::uint64_t seed = 20160101;
  int year = 2016;
  /// Rows are spread evenly over these months.
  std::vector<int> months = {1};
};

/// CSV columns: pickup_datetime, pickup_longitude, pickup_latitude, total_amount.
void write_csv(std::ostream& out, const SyntheticConfig& config);

/// Domain used by the synthetic data: a 90 x 90 degree box, so that cell sizes at a given level
/// are close to those of a cube-face quadtree.
geo::Domain synthetic_domain();

/// day_of_month, day_of_week, hour, [month,] pickup (geo, `geo_levels`), fare (single Gaussian).
data::AttributeSchema synthetic_schema(int geo_levels = 13, bool with_month = false);

/// Same attributes as the synthetic schema at 16 geo levels: the configuration used for the
/// reference state-size accounting.
data::AttributeSchema reference_schema();

data::EncodedDataset generate(const SyntheticConfig& config, const data::AttributeSchema& schema);

}  // namespace deepspace::synth
