#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace deepspace::geo {

inline constexpr int kMaxLevel = 30;

struct GeoPoint {
  double lon = 0.0;
  double lat = 0.0;
};

/// Axis-aligned lon/lat rectangle. Bounds are closed.
struct Rect {
  double min_lon = 0.0;
  double min_lat = 0.0;
  double max_lon = 0.0;
  double max_lat = 0.0;

  bool contains(const GeoPoint& p) const {
    return p.lon >= min_lon && p.lon <= max_lon && p.lat >= min_lat && p.lat <= max_lat;
  }
  GeoPoint centroid() const { return {(min_lon + max_lon) / 2, (min_lat + max_lat) / 2}; }
};

/// Planar bounding box that the quadtree subdivides. Level 0 is the whole box.
struct Domain {
  double min_lon = -180.0;
  double min_lat = -90.0;
  double max_lon = 180.0;
  double max_lat = 90.0;
  int max_level = kMaxLevel;

  /// Throws ArgumentError if the box is empty or max_level is outside [1, 30].
  void validate() const;
  bool contains(const GeoPoint& p) const;
  Rect rect() const { return {min_lon, min_lat, max_lon, max_lat}; }
};

/// A node of the Hilbert-ordered quadtree.
///
/// The token sequence (one base-4 digit per level, coarse to fine) is stored packed as its base-4
/// integer value, which is also the cell's position along the level's Hilbert curve.
class Cell {
 public:
  Cell() = default;
  Cell(int level, std::uint64_t curve_index);
  static Cell from_tokens(std::span<const std::uint8_t> tokens);
  /// Parses a digit string such as "0213"; the empty string is the level-0 cell.
  static Cell parse(const std::string& digits);

  int level() const { return level_; }
  std::uint64_t curve_index() const { return index_; }
  std::uint8_t token(int i) const;
  std::vector<std::uint8_t> tokens() const;
  std::string to_string() const;

  /// Truncates to a coarser level (the ancestor at that level).
  Cell ancestor(int level) const;
  Cell parent() const;
  std::array<Cell, 4> children() const;

  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;

 private:
  int level_ = 0;
  std::uint64_t index_ = 0;
};

/// Unique level-`level` cell containing `point`. The digit at each level is the child's rank
/// along the Hilbert curve; the curve enters every cell in its (min_lon, min_lat) quadrant at
/// level 1 and orientation is carried from level to level.
Cell encode(const GeoPoint& point, int level, const Domain& domain);

/// True iff `ancestor`'s tokens are a prefix of `candidate`'s (equality included).
bool contains(const Cell& ancestor, const Cell& candidate);

/// Children with digits 0..3 appended. Throws ArgumentError at domain.max_level.
std::array<Cell, 4> children(const Cell& cell, const Domain& domain);
/// Throws ArgumentError for the level-0 cell.
Cell parent(const Cell& cell);

/// Grid column/row of the cell at its own level (0 .. 2^level - 1).
std::pair<std::uint64_t, std::uint64_t> cell_grid_position(const Cell& cell);

Rect cell_bounds(const Cell& cell, const Domain& domain);

/// All level-`level` cells that overlap the polygon with positive area, ascending by curve index.
/// Cells that only touch the polygon's boundary are excluded, so covers of polygons that share an
/// edge are disjoint. `ring` need not repeat its first vertex.
std::vector<Cell> cover_polygon(std::span<const GeoPoint> ring, int level, const Domain& domain);

/// All level-`level` cells whose bounds overlap `rect` with positive area, ascending by curve index.
std::vector<Cell> cover_rect_interior(const Rect& rect, int level, const Domain& domain);

/// Closed point-in-polygon test (points on the boundary count as inside).
bool point_in_polygon(const GeoPoint& p, std::span<const GeoPoint> ring);

}  // namespace deepspace::geo
