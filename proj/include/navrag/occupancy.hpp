#pragma once

// Geodesic distance and line-of-sight over an OccupancyGrid.

#include <cmath>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

#include "navrag/geometry.hpp"
#include "navrag/scene_model.hpp"

namespace navrag {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Bounded 8-connected Dijkstra over free cells. Diagonal steps cost
/// sqrt(2)*cell_size and may not cut a blocked corner. Buffers are reused
/// across queries, so one instance should not be shared between threads.
class GridGeodesic {
 public:
  explicit GridGeodesic(const OccupancyGrid& grid)
      : grid_(grid), dist_(static_cast<std::size_t>(grid.rows()) * grid.cols(), kInfinity) {}

  /// Runs from the cell of `from`; cells farther than `cutoff` stay infinite.
  /// Returns false when the source cell is blocked or outside the grid.
  bool run(const Point3& from, double cutoff = kInfinity) {
    reset();
    valid_ = false;
    const auto [r0, c0] = grid_.cell_of(from.x, from.y);
    if (!grid_.free(r0, c0)) return false;
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    set(r0, c0, 0.0);
    pq.push({0.0, flat(r0, c0)});
    const double cs = grid_.cell_size();
    const double diag = std::sqrt(2.0) * cs;
    while (!pq.empty()) {
      const auto [d, cell] = pq.top();
      pq.pop();
      if (d > dist_[cell]) continue;
      const int r = static_cast<int>(cell / grid_.cols());
      const int c = static_cast<int>(cell % grid_.cols());
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int nr = r + dr, nc = c + dc;
          if (!grid_.free(nr, nc)) continue;
          if (dr != 0 && dc != 0 && (!grid_.free(r + dr, c) || !grid_.free(r, c + dc))) continue;
          const double nd = d + ((dr != 0 && dc != 0) ? diag : cs);
          if (nd > cutoff) continue;
          const std::size_t n = flat(nr, nc);
          if (nd < dist_[n]) {
            set(nr, nc, nd);
            pq.push({nd, n});
          }
        }
      }
    }
    source_ = from;
    valid_ = true;
    return true;
  }

  /// Distance from the last `run` source to `to` (cell-center path length;
  /// planar Euclidean when both points share a cell).
  double distance_to(const Point3& to) const {
    if (!valid_) return kInfinity;
    const auto [r, c] = grid_.cell_of(to.x, to.y);
    if (!grid_.in_bounds(r, c)) return kInfinity;
    const auto [sr, sc] = grid_.cell_of(source_.x, source_.y);
    if (r == sr && c == sc) return grid_.free(r, c) ? planar_distance(source_, to) : kInfinity;
    return dist_[flat(r, c)];
  }

 private:
  std::size_t flat(int r, int c) const { return static_cast<std::size_t>(r) * grid_.cols() + c; }
  void set(int r, int c, double d) {
    const std::size_t i = flat(r, c);
    if (dist_[i] == kInfinity) touched_.push_back(i);
    dist_[i] = d;
  }
  void reset() {
    for (auto i : touched_) dist_[i] = kInfinity;
    touched_.clear();
  }

  const OccupancyGrid& grid_;
  std::vector<double> dist_;
  std::vector<std::size_t> touched_;
  Point3 source_{};
  bool valid_ = false;
};

/// Shortest traversable distance between two points: grid path length when an
/// occupancy grid is given (infinity if disconnected), Euclidean otherwise.
inline double geodesic_distance(const Point3& a, const Point3& b, const OccupancyGrid* occupancy = nullptr) {
  if (a == b) return 0.0;
  if (!occupancy) return distance(a, b);
  GridGeodesic g(*occupancy);
  if (!g.run(a)) return kInfinity;
  return g.distance_to(b);
}

/// Every grid cell the segment a->b passes through, including both cells
/// at an exact corner crossing (supercover traversal).
inline std::vector<std::pair<int, int>> supercover_cells(const OccupancyGrid& grid, const Point3& a, const Point3& b) {
  std::vector<std::pair<int, int>> out;
  const double cs = grid.cell_size();
  const double x0 = (a.x - grid.origin().x) / cs, y0 = (a.y - grid.origin().y) / cs;
  const double x1 = (b.x - grid.origin().x) / cs, y1 = (b.y - grid.origin().y) / cs;
  int c = static_cast<int>(std::floor(x0)), r = static_cast<int>(std::floor(y0));
  const int c_end = static_cast<int>(std::floor(x1)), r_end = static_cast<int>(std::floor(y1));
  const double dx = x1 - x0, dy = y1 - y0;
  const int step_c = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int step_r = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  const double t_delta_c = step_c ? std::abs(1.0 / dx) : kInfinity;
  const double t_delta_r = step_r ? std::abs(1.0 / dy) : kInfinity;
  double t_max_c = step_c > 0 ? (std::floor(x0) + 1 - x0) * t_delta_c
                   : step_c < 0 ? (x0 - std::floor(x0)) * t_delta_c
                                : kInfinity;
  double t_max_r = step_r > 0 ? (std::floor(y0) + 1 - y0) * t_delta_r
                   : step_r < 0 ? (y0 - std::floor(y0)) * t_delta_r
                                : kInfinity;
  out.emplace_back(r, c);
  const int max_steps = std::abs(c_end - c) + std::abs(r_end - r) + 2;
  for (int i = 0; i < max_steps && (r != r_end || c != c_end); ++i) {
    if (t_max_c < t_max_r) {
      c += step_c;
      t_max_c += t_delta_c;
    } else if (t_max_r < t_max_c) {
      r += step_r;
      t_max_r += t_delta_r;
    } else {
      out.emplace_back(r + step_r, c);
      out.emplace_back(r, c + step_c);
      r += step_r;
      c += step_c;
      t_max_c += t_delta_c;
      t_max_r += t_delta_r;
    }
    out.emplace_back(r, c);
  }
  return out;
}

/// True iff every cell touched by the segment is traversable.
inline bool line_of_sight(const OccupancyGrid& grid, const Point3& a, const Point3& b) {
  for (const auto& [r, c] : supercover_cells(grid, a, b))
    if (!grid.free(r, c)) return false;
  return true;
}

}  // namespace navrag
