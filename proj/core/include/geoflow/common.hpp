#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace geoflow {

// Error taxonomy. The CLI maps these onto process exit codes, so library code
// should throw the most specific class that applies.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric guard thresholds used by the geometry kernels. One instance with
// defaults lives at geoflow::tol; callers that need looser/tighter behaviour
// pass their own copy.
struct Tolerances {
  double unit_norm = 1e-9;       // renormalise threshold for unit vectors
  double tangent = 1e-7;         // |<base, v>| bound for tangent vectors
  double small_angle = 1e-8;     // below this, trig ratios switch to limits
  double antipodal_margin = 1e-6;  // angles beyond pi - margin are rejected
};

inline constexpr Tolerances tol{};

inline double clamp_unit(double x) { return x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x); }

// log of the surface area of the unit sphere S^{d-1} embedded in R^d.
inline double log_sphere_area(int d) {
  return std::log(2.0) + 0.5 * d * std::log(M_PI) - std::lgamma(0.5 * d);
}

enum class Geometry { Riemannian, Euclidean };

inline std::string geometry_name(Geometry g) {
  return g == Geometry::Riemannian ? "riemannian" : "euclidean";
}

}  // namespace geoflow
