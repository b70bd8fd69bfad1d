#include "geoflow/sphere.hpp"

#include <cmath>

#include "geoflow/rng.hpp"

namespace geoflow {

UnitVector::UnitVector(VectorXd v, const Tolerances& t) : v_(std::move(v)) {
  if (v_.size() < 2) throw ConfigError("unit vector needs dim >= 2");
  const double n = v_.norm();
  if (n < 1e-12) throw NumericalError("cannot normalise a near-zero vector");
  if (std::abs(n - 1.0) > t.unit_norm) v_ /= n;
}

void TangentVector::validate(const Tolerances& t) const {
  const double ip = std::abs(base.dot(components));
  if (ip > t.tangent)
    throw NumericalError("tangent vector has radial component " + std::to_string(ip));
}

VectorXd ProductPoint::concat() const {
  VectorXd z(image.size() + text.size());
  z << image, text;
  return z;
}

ProductPoint ProductPoint::split(const VectorXd& z) {
  const int d = static_cast<int>(z.size()) / 2;
  return {z.head(d), z.tail(d)};
}

double geodesic_distance(const VectorXd& x, const VectorXd& y) {
  return std::acos(clamp_unit(x.dot(y)));
}

VectorXd exp_map(const VectorXd& x, const VectorXd& v, const Tolerances& t) {
  const double n = v.norm();
  if (n < t.small_angle) return x;
  return std::cos(n) * x + (std::sin(n) / n) * v;
}

VectorXd log_map(const VectorXd& x, const VectorXd& y, const Tolerances& t) {
  const double theta = geodesic_distance(x, y);
  if (theta > M_PI - t.antipodal_margin)
    throw NumericalError("log map undefined near antipodal pair (angle " +
                         std::to_string(theta) + ")");
  if (theta < t.small_angle) return y - x.dot(y) * x;
  return (theta / std::sin(theta)) * (y - std::cos(theta) * x);
}

VectorXd geodesic_interpolate(const VectorXd& a, const VectorXd& b, double t,
                              const Tolerances& tl) {
  const double omega = geodesic_distance(a, b);
  if (omega > M_PI - tl.antipodal_margin)
    throw NumericalError("geodesic undefined near antipodal pair (angle " +
                         std::to_string(omega) + ")");
  if (omega < tl.small_angle) {
    VectorXd z = a + t * (b - a);
    return z / z.norm();
  }
  const double s = std::sin(omega);
  return (std::sin((1.0 - t) * omega) / s) * a + (std::sin(t * omega) / s) * b;
}

VectorXd geodesic_velocity(const VectorXd& z0, const VectorXd& z1, double t,
                           const Tolerances& tl) {
  const double omega = geodesic_distance(z0, z1);
  if (omega > M_PI - tl.antipodal_margin)
    throw NumericalError("geodesic undefined near antipodal pair (angle " +
                         std::to_string(omega) + ")");
  if (omega < tl.small_angle) return z1 - z0;
  const double r = omega / std::sin(omega);
  return r * (std::cos(t * omega) * z1 - std::cos((1.0 - t) * omega) * z0);
}

VectorXd tangent_project(const VectorXd& z, const VectorXd& v) {
  return v - z.dot(v) * z;
}

ProductPoint masked_interpolate(const ProductPoint& z0, const ProductPoint& z1,
                                const FlowMask& mask, double t_img, double t_txt,
                                const Tolerances& tl) {
  ProductPoint out;
  out.image = mask.transports_image()
                  ? geodesic_interpolate(z0.image, z1.image, t_img, tl)
                  : z1.image;
  out.text = mask.transports_text()
                 ? geodesic_interpolate(z0.text, z1.text, t_txt, tl)
                 : z1.text;
  return out;
}

ProductPoint masked_target_velocity(const ProductPoint& z0, const ProductPoint& z1,
                                    const FlowMask& mask, double t_img, double t_txt,
                                    const Tolerances& tl) {
  ProductPoint out;
  out.image = mask.transports_image() ? geodesic_velocity(z0.image, z1.image, t_img, tl)
                                      : VectorXd::Zero(z0.image.size());
  out.text = mask.transports_text() ? geodesic_velocity(z0.text, z1.text, t_txt, tl)
                                    : VectorXd::Zero(z0.text.size());
  return out;
}

VectorXd sample_uniform_sphere(int d, Rng& rng) {
  VectorXd v(d);
  double n2;
  do {
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    n2 = v.squaredNorm();
  } while (n2 < 1e-24);
  return v / std::sqrt(n2);
}

}  // namespace geoflow
