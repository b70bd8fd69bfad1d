#pragma once

#include <Eigen/Dense>

#include "geoflow/common.hpp"
#include "geoflow/mask.hpp"

namespace geoflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Point on S^{d-1}, renormalised on construction. Inputs whose norm deviates
// from 1 by more than tol.unit_norm are silently rescaled; a near-zero vector
// is a hard error because its direction is undefined.
class UnitVector {
 public:
  explicit UnitVector(VectorXd v, const Tolerances& t = tol);

  const VectorXd& vec() const { return v_; }
  int dim() const { return static_cast<int>(v_.size()); }

 private:
  VectorXd v_;
};

// Tangent vector at a base point: components orthogonal to the base.
struct TangentVector {
  VectorXd base;
  VectorXd components;

  // Throws NumericalError if <base, components> exceeds t.tangent.
  void validate(const Tolerances& t = tol) const;
};

// Product state (image sphere, text sphere). Blocks share the ambient dim.
struct ProductPoint {
  VectorXd image;
  VectorXd text;

  int dim() const { return static_cast<int>(image.size()); }
  VectorXd concat() const;
  static ProductPoint split(const VectorXd& z);
};

// Angle between two unit vectors, inner product clamped to [-1, 1].
double geodesic_distance(const VectorXd& x, const VectorXd& y);

// exp_x(v) = cos(|v|) x + sin(|v|) v / |v|; returns x when |v| is below the
// small-angle threshold.
VectorXd exp_map(const VectorXd& x, const VectorXd& v, const Tolerances& t = tol);

// Inverse of exp_map. Throws NumericalError for antipodal pairs, where the
// direction is not unique.
VectorXd log_map(const VectorXd& x, const VectorXd& y, const Tolerances& t = tol);

// Arc-length parametrised geodesic from a (t=0) to b (t=1). Falls back to a
// renormalised chord below the small-angle threshold; antipodal pairs throw.
VectorXd geodesic_interpolate(const VectorXd& a, const VectorXd& b, double t,
                              const Tolerances& tl = tol);

// Time derivative of the geodesic above at time t, expressed in the ambient
// space. Its norm equals the angle between the endpoints, and it is tangent
// at the interpolated point. Small angles reduce to z1 - z0.
VectorXd geodesic_velocity(const VectorXd& z0, const VectorXd& z1, double t,
                           const Tolerances& tl = tol);

// Remove the radial component of v at z (single sphere).
VectorXd tangent_project(const VectorXd& z, const VectorXd& v);

// Interpolant for the masked flow: transported blocks follow the geodesic at
// their stream time, conditioned blocks sit at their endpoint value.
ProductPoint masked_interpolate(const ProductPoint& z0, const ProductPoint& z1,
                                const FlowMask& mask, double t_img, double t_txt,
                                const Tolerances& tl = tol);

// Regression target for the masked flow: geodesic velocity on transported
// blocks, zero on conditioned blocks.
ProductPoint masked_target_velocity(const ProductPoint& z0, const ProductPoint& z1,
                                    const FlowMask& mask, double t_img, double t_txt,
                                    const Tolerances& tl = tol);

// Uniform draw on S^{d-1} (Gaussian direction method).
class Rng;
VectorXd sample_uniform_sphere(int d, Rng& rng);

}  // namespace geoflow
