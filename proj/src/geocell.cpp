#include "deepspace/geocell.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "deepspace/errors.hpp"

namespace deepspace::geo {

namespace {

void check_level(int level) {
  if (level < 0 || level > kMaxLevel) {
    throw ArgumentError("cell level " + std::to_string(level) + " outside [0, 30]");
  }
}

// Hilbert index of grid position (x, y) on a 2^level x 2^level grid.
std::uint64_t hilbert_index(std::uint64_t x, std::uint64_t y, int level) {
  std::uint64_t d = 0;
  for (std::uint64_t s = level == 0 ? 0 : (std::uint64_t{1} << (level - 1)); s > 0; s >>= 1) {
    const std::uint64_t rx = (x & s) ? 1 : 0;
    const std::uint64_t ry = (y & s) ? 1 : 0;
    d += s * s * ((3 * rx) ^ ry);
    x &= s - 1;
    y &= s - 1;
    if (ry == 0) {
      if (rx == 1) {
        x = s - 1 - x;
        y = s - 1 - y;
      }
      std::swap(x, y);
    }
  }
  return d;
}

std::pair<std::uint64_t, std::uint64_t> hilbert_position(std::uint64_t d, int level) {
  std::uint64_t x = 0;
  std::uint64_t y = 0;
  const std::uint64_t n = std::uint64_t{1} << level;
  for (std::uint64_t s = 1; s < n; s <<= 1) {
    const std::uint64_t rx = 1 & (d >> 1);
    const std::uint64_t ry = 1 & (d ^ rx);
    if (ry == 0) {
      if (rx == 1) {
        x = s - 1 - x;
        y = s - 1 - y;
      }
      std::swap(x, y);
    }
    x += s * rx;
    y += s * ry;
    d >>= 2;
  }
  return {x, y};
}

std::uint64_t grid_coordinate(double value, double lo, double hi) {
  constexpr double kCells = static_cast<double>(std::uint64_t{1} << kMaxLevel);
  const double scaled = std::floor((value - lo) / (hi - lo) * kCells);
  if (scaled <= 0.0) return 0;
  if (scaled >= kCells) return (std::uint64_t{1} << kMaxLevel) - 1;
  return static_cast<std::uint64_t>(scaled);
}

double edge(double lo, double hi, std::uint64_t k, int level) {
  if (k == (std::uint64_t{1} << level)) return hi;
  return lo + (hi - lo) * std::ldexp(static_cast<double>(k), -level);
}

double cross(const GeoPoint& o, const GeoPoint& a, const GeoPoint& b) {
  return (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon);
}

bool on_segment(const GeoPoint& a, const GeoPoint& b, const GeoPoint& p) {
  return std::min(a.lon, b.lon) <= p.lon && p.lon <= std::max(a.lon, b.lon) &&
         std::min(a.lat, b.lat) <= p.lat && p.lat <= std::max(a.lat, b.lat);
}

// Area of ring ∩ r by Sutherland-Hodgman clipping against the (convex) rectangle.
double clipped_area(const Rect& r, std::span<const GeoPoint> ring) {
  std::vector<GeoPoint> poly(ring.begin(), ring.end());
  std::vector<GeoPoint> next;
  // Each edge keeps points with coord * sign <= bound * sign.
  const auto clip = [&](bool lon_axis, double bound, double dir) {
    next.clear();
    const auto inside = [&](const GeoPoint& p) { return ((lon_axis ? p.lon : p.lat) - bound) * dir <= 0.0; };
    const auto cut = [&](const GeoPoint& a, const GeoPoint& b) {
      const double ta = lon_axis ? a.lon : a.lat;
      const double tb = lon_axis ? b.lon : b.lat;
      const double t = (bound - ta) / (tb - ta);
      return lon_axis ? GeoPoint{bound, a.lat + t * (b.lat - a.lat)} : GeoPoint{a.lon + t * (b.lon - a.lon), bound};
    };
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const auto& cur = poly[i];
      const auto& prev = poly[(i + poly.size() - 1) % poly.size()];
      const bool in_cur = inside(cur);
      const bool in_prev = inside(prev);
      if (in_cur) {
        if (!in_prev) next.push_back(cut(prev, cur));
        next.push_back(cur);
      } else if (in_prev) {
        next.push_back(cut(prev, cur));
      }
    }
    poly.swap(next);
  };
  clip(true, r.max_lon, 1.0);
  if (!poly.empty()) clip(true, r.min_lon, -1.0);
  if (!poly.empty()) clip(false, r.max_lat, 1.0);
  if (!poly.empty()) clip(false, r.min_lat, -1.0);
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    twice += a.lon * b.lat - b.lon * a.lat;
  }
  return std::abs(twice) / 2.0;
}

bool rect_overlaps_polygon(const Rect& r, std::span<const GeoPoint> ring) {
  const double cell_area = (r.max_lon - r.min_lon) * (r.max_lat - r.min_lat);
  return clipped_area(r, ring) > 1e-12 * cell_area;
}

template <typename Pred>
void descend(const Cell& cell, int level, const Domain& domain, const Pred& intersects,
             std::vector<Cell>& out) {
  if (!intersects(cell_bounds(cell, domain))) return;
  if (cell.level() == level) {
    out.push_back(cell);
    return;
  }
  for (const auto& child : cell.children()) {
    descend(child, level, domain, intersects, out);
  }
}

}  // namespace

void Domain::validate() const {
  if (!(std::isfinite(min_lon) && std::isfinite(max_lon) && std::isfinite(min_lat) &&
        std::isfinite(max_lat))) {
    throw ArgumentError("domain bounds must be finite");
  }
  if (!(min_lon < max_lon) || !(min_lat < max_lat)) {
    throw ArgumentError("domain requires min < max on both axes");
  }
  if (max_level < 1 || max_level > kMaxLevel) {
    throw ArgumentError("domain max_level must be in [1, 30]");
  }
}

bool Domain::contains(const GeoPoint& p) const {
  return std::isfinite(p.lon) && std::isfinite(p.lat) && p.lon >= min_lon && p.lon <= max_lon &&
         p.lat >= min_lat && p.lat <= max_lat;
}

Cell::Cell(int level, std::uint64_t curve_index) : level_(level), index_(curve_index) {
  check_level(level);
  if (level < 32 && curve_index >= (std::uint64_t{1} << (2 * level))) {
    throw ArgumentError("curve index exceeds 4^level");
  }
}

Cell Cell::from_tokens(std::span<const std::uint8_t> tokens) {
  check_level(static_cast<int>(tokens.size()));
  std::uint64_t index = 0;
  for (auto t : tokens) {
    if (t > 3) throw ArgumentError("cell token must be in {0,1,2,3}");
    index = (index << 2) | t;
  }
  return Cell(static_cast<int>(tokens.size()), index);
}

Cell Cell::parse(const std::string& digits) {
  std::vector<std::uint8_t> tokens;
  tokens.reserve(digits.size());
  for (char c : digits) {
    if (c < '0' || c > '3') throw ArgumentError("cell token string may only contain digits 0-3");
    tokens.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return from_tokens(tokens);
}

std::uint8_t Cell::token(int i) const {
  if (i < 0 || i >= level_) throw ArgumentError("token position out of range");
  return static_cast<std::uint8_t>((index_ >> (2 * (level_ - 1 - i))) & 3);
}

std::vector<std::uint8_t> Cell::tokens() const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(level_));
  for (int i = 0; i < level_; ++i) out[static_cast<std::size_t>(i)] = token(i);
  return out;
}

std::string Cell::to_string() const {
  std::string s;
  s.reserve(static_cast<std::size_t>(level_));
  for (int i = 0; i < level_; ++i) s.push_back(static_cast<char>('0' + token(i)));
  return s;
}

Cell Cell::ancestor(int level) const {
  if (level < 0 || level > level_) throw ArgumentError("ancestor level must be in [0, level]");
  return Cell(level, index_ >> (2 * (level_ - level)));
}

Cell Cell::parent() const {
  if (level_ == 0) throw ArgumentError("the level-0 cell has no parent");
  return ancestor(level_ - 1);
}

std::array<Cell, 4> Cell::children() const {
  if (level_ >= kMaxLevel) throw ArgumentError("cell at level 30 has no children");
  std::array<Cell, 4> out;
  for (std::uint64_t d = 0; d < 4; ++d) out[d] = Cell(level_ + 1, (index_ << 2) | d);
  return out;
}

Cell encode(const GeoPoint& point, int level, const Domain& domain) {
  if (level < 0 || level > domain.max_level) {
    throw ArgumentError("level " + std::to_string(level) + " outside [0, " +
                        std::to_string(domain.max_level) + "]");
  }
  if (!domain.contains(point)) {
    throw OutOfDomainError("point (" + std::to_string(point.lon) + ", " + std::to_string(point.lat) +
                           ") lies outside the domain");
  }
  const std::uint64_t x = grid_coordinate(point.lon, domain.min_lon, domain.max_lon) >> (kMaxLevel - level);
  const std::uint64_t y = grid_coordinate(point.lat, domain.min_lat, domain.max_lat) >> (kMaxLevel - level);
  return Cell(level, hilbert_index(x, y, level));
}

bool contains(const Cell& ancestor, const Cell& candidate) {
  if (ancestor.level() > candidate.level()) return false;
  return candidate.ancestor(ancestor.level()) == ancestor;
}

std::array<Cell, 4> children(const Cell& cell, const Domain& domain) {
  if (cell.level() >= domain.max_level) {
    throw ArgumentError("cell is already at the domain's max level");
  }
  return cell.children();
}

Cell parent(const Cell& cell) { return cell.parent(); }

std::pair<std::uint64_t, std::uint64_t> cell_grid_position(const Cell& cell) {
  return hilbert_position(cell.curve_index(), cell.level());
}

Rect cell_bounds(const Cell& cell, const Domain& domain) {
  const auto [x, y] = hilbert_position(cell.curve_index(), cell.level());
  const int l = cell.level();
  return {edge(domain.min_lon, domain.max_lon, x, l), edge(domain.min_lat, domain.max_lat, y, l),
          edge(domain.min_lon, domain.max_lon, x + 1, l), edge(domain.min_lat, domain.max_lat, y + 1, l)};
}

bool point_in_polygon(const GeoPoint& p, std::span<const GeoPoint> ring) {
  const std::size_t n = ring.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = ring[i];
    const auto& b = ring[j];
    if (cross(a, b, p) == 0.0 && on_segment(a, b, p)) return true;
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double lon_at = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (p.lon < lon_at) inside = !inside;
    }
  }
  return inside;
}

std::vector<Cell> cover_polygon(std::span<const GeoPoint> ring, int level, const Domain& domain) {
  if (level < 0 || level > domain.max_level) throw ArgumentError("cover level out of range");
  std::vector<GeoPoint> pts(ring.begin(), ring.end());
  if (pts.size() > 1 && pts.front().lon == pts.back().lon && pts.front().lat == pts.back().lat) {
    pts.pop_back();
  }
  std::set<std::pair<double, double>> distinct;
  for (const auto& p : pts) {
    if (!domain.contains(p)) throw OutOfDomainError("polygon vertex lies outside the domain");
    distinct.emplace(p.lon, p.lat);
  }
  if (distinct.size() < 3) throw ArgumentError("polygon needs at least 3 distinct vertices");

  std::vector<Cell> out;
  descend(Cell{}, level, domain, [&](const Rect& r) { return rect_overlaps_polygon(r, pts); }, out);
  return out;
}

std::vector<Cell> cover_rect_interior(const Rect& rect, int level, const Domain& domain) {
  if (level < 0 || level > domain.max_level) throw ArgumentError("cover level out of range");
  std::vector<Cell> out;
  descend(Cell{}, level, domain,
          [&](const Rect& r) {
            return std::max(r.min_lon, rect.min_lon) < std::min(r.max_lon, rect.max_lon) &&
                   std::max(r.min_lat, rect.min_lat) < std::min(r.max_lat, rect.max_lat);
          },
          out);
  return out;
}

}  // namespace deepspace::geo
