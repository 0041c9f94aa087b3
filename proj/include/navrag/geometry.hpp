#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace navrag {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// World-frame position in meters. The ground plane is (x, y); z is height.
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(const Point3&, const Point3&) = default;

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline double planar_distance(const Point3& a, const Point3& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Rounds to 9 significant digits, the precision of every interchange file.
/// The result is a fixed point: quantize(quantize(v)) == quantize(v).
inline double quantize(double v) {
  if (!std::isfinite(v) || v == 0.0) return v == 0.0 ? 0.0 : v;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline Point3 quantize(const Point3& p) { return {quantize(p.x), quantize(p.y), quantize(p.z)}; }

}  // namespace navrag
