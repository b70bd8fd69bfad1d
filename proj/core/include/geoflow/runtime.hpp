#pragma once

#include <functional>
#include <vector>

#include "geoflow/net.hpp"
#include "geoflow/sphere.hpp"

namespace geoflow {

enum class ProbeKind { Rademacher, Gaussian };

struct SolverConfig {
  int n_steps = 50;
  int n_probes = 1;
  ProbeKind probe = ProbeKind::Rademacher;
  double guidance = 3.0;  // ignored by joint sampling and by density solves
  std::uint64_t seed = 0;
  Geometry geometry = Geometry::Riemannian;

  void validate() const;
};

struct SampleBatch {
  MatrixXd img, txt;  // d x n final states
};

// Forward Euler from t=0 noise to t=1 under the masked velocity field.
// Conditional masks take the conditioner block in cond (one column per
// output) and apply classifier-free guidance at cfg.guidance, with the
// unconditional branch substituting a coupled noise draw for the
// conditioner. column_tags (size n) seed the per-column noise streams, so
// the draws do not depend on how a workload is split into calls; integrated
// states agree across splits up to matrix-product accumulation order.
SampleBatch sample(const NetParams& p, MaskKind kind, const MatrixXd* cond,
                   Eigen::Index n, const SolverConfig& cfg,
                   const std::vector<std::uint64_t>& column_tags);

// Single-state guided field evaluation, conditional masks only. The
// unconditional branch replaces the conditioner block with uncond_sub.
// Conditioner-block velocity is zero. lambda < 0 is an error; lambda == 0
// reduces exactly to the conditional field.
ProductPoint guided_velocity(const NetParams& p, MaskKind kind,
                             const ProductPoint& state, const VectorXd& uncond_sub,
                             double t, double lambda, Geometry geom);

// Hutchinson estimate of the divergence of an arbitrary ambient field over
// the transported blocks. In Riemannian geometry the probes are projected
// into the tangent space and the radial terms the projector sheds are
// corrected exactly; in Euclidean geometry raw ambient probes are used.
struct FieldPoint {
  VectorXd value;  // raw ambient field, size 2d
  std::function<VectorXd(const VectorXd&)> vjp;
};
using Field = std::function<FieldPoint(const ProductPoint&)>;

double divergence_estimate(const Field& field, const ProductPoint& z,
                           const FlowMask& mask, int n_probes, ProbeKind kind,
                           Rng& rng, Geometry geom);

struct DensityEstimate {
  double log_density = 0.0;
  double divergence_integral = 0.0;  // accumulated -int div dt
  double base_log_density = 0.0;
  int n_steps = 0;
  int n_probes = 0;
  std::uint64_t seed = 0;
};

// Reverse-time Euler solve of the augmented system from each endpoint,
// always under the unguided conditional/joint field. ids seed the per-pair
// probe streams (one stream per (mask, id, step, probe)).
std::vector<DensityEstimate> log_density_batch(const NetParams& p, MaskKind kind,
                                               const MatrixXd& img,
                                               const MatrixXd& txt,
                                               const SolverConfig& cfg,
                                               const std::vector<std::uint64_t>& ids);

DensityEstimate log_density(const NetParams& p, MaskKind kind, const ProductPoint& z,
                            const SolverConfig& cfg, std::uint64_t id = 0);

// Three density solves per pair (joint and both conditionals); marginals by
// subtraction, so the chain-rule identities below hold exactly:
//   marg_i = joint + cond_t_given_i's negation ... see fields.
struct DecompositionReport {
  double joint_nll = 0.0;        // -log p(image, text)
  double cond_t_given_i = 0.0;   // log p(text | image)
  double cond_i_given_t = 0.0;   // log p(image | text)
  double marg_i = 0.0;           // joint logp - cond_t_given_i
  double marg_t = 0.0;           // joint logp - cond_i_given_t
  double pmi = 0.0;              // joint logp - marg_i - marg_t
  double epistemic_sum = 0.0;    // -marg_i - marg_t
};

std::vector<DecompositionReport> decompose_batch(const NetParams& p,
                                                 const MatrixXd& img,
                                                 const MatrixXd& txt,
                                                 const SolverConfig& cfg,
                                                 const std::vector<std::uint64_t>& ids);

DecompositionReport decompose(const NetParams& p, const ProductPoint& z,
                              const SolverConfig& cfg, std::uint64_t id = 0);

}  // namespace geoflow
