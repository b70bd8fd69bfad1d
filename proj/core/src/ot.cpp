#include "geoflow/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace geoflow {

MatrixXd product_geodesic_cost(const MatrixXd& img0, const MatrixXd& txt0,
                               const MatrixXd& img1, const MatrixXd& txt1) {
  if (img0.cols() != txt0.cols() || img1.cols() != txt1.cols() ||
      img0.cols() != img1.cols())
    throw DataError("transport cost needs equal batch sizes on both sides");
  if (img0.rows() != img1.rows() || txt0.rows() != txt1.rows())
    throw DataError("transport cost needs matching embedding dims");
  MatrixXd gi = img0.transpose() * img1;
  MatrixXd gt = txt0.transpose() * txt1;
  return gi.array().min(1.0).max(-1.0).acos() + gt.array().min(1.0).max(-1.0).acos();
}

namespace {

// One half-iteration on pre-scaled costs: given scaled potentials `other`
// on the opposite marginal, compute per-column log-sum-exp of
// other_i - cs(i,j), the implied marginal sums under the current scaled
// `own` potentials, and the update of `own` that drives those marginals to
// exactness. cs = cost/eps with the `own` axis as columns; potentials here
// carry a 1/eps factor. Returns the pre-update residual.
double half_update(const MatrixXd& cs, const VectorXd& other, VectorXd& own,
                   double log_mass, MatrixXd& work) {
  const auto n = cs.cols();
  work = (-cs).colwise() + other;
  VectorXd m = work.colwise().maxCoeff();
  VectorXd lse(n);
  for (Eigen::Index j = 0; j < n; ++j)
    lse[j] = m[j] + std::log((work.col(j).array() - m[j]).exp().sum());
  double residual = 0.0;
  const double mass = std::exp(log_mass);
  for (Eigen::Index j = 0; j < n; ++j)
    residual = std::max(residual, std::abs(std::exp(own[j] + lse[j]) - mass));
  own = VectorXd::Constant(n, log_mass) - lse;
  return residual;
}

// Damped Newton correction on the dual potentials, last g entry gauge-fixed.
// The alternating sweeps contract arbitrarily slowly for spread-out costs at
// small eps, while the gauge-fixed dual is smooth and strictly concave, so a
// few of these corrections cut the slow linear tail. Accepts the step only
// if the worst marginal residual drops; returns false otherwise (the caller
// disables polishing after repeated rejections, e.g. when eps is so small
// that the Hessian degenerates toward the unregularized assignment problem).
bool newton_polish(const MatrixXd& cs, VectorXd& f, VectorXd& g, double mass) {
  const auto b = cs.rows();
  const MatrixXd P =
      ((((-cs).colwise() + f).rowwise() + g.transpose()).array()).exp().matrix();
  const VectorXd r = P.rowwise().sum(), c = P.colwise().sum();
  const double res0 = std::max((r.array() - mass).abs().maxCoeff(),
                               (c.array() - mass).abs().maxCoeff());
  const auto nvar = 2 * b - 1;
  MatrixXd J = MatrixXd::Zero(nvar, nvar);
  VectorXd R(nvar);
  for (Eigen::Index i = 0; i < b; ++i) {
    J(i, i) = r[i] + 1e-12;
    R[i] = r[i] - mass;
  }
  for (Eigen::Index j = 0; j + 1 < b; ++j) {
    J(b + j, b + j) = c[j] + 1e-12;
    R[b + j] = c[j] - mass;
  }
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j + 1 < b; ++j) J(i, b + j) = J(b + j, i) = P(i, j);
  const VectorXd delta = J.ldlt().solve(-R);
  if (!delta.allFinite()) return false;

  double step = 1.0;
  for (int ls = 0; ls < 8; ++ls, step *= 0.5) {
    VectorXd f2 = f, g2 = g;
    f2 += step * delta.head(b);
    g2.head(b - 1) += step * delta.tail(b - 1);
    const MatrixXd P2 =
        ((((-cs).colwise() + f2).rowwise() + g2.transpose()).array()).exp().matrix();
    const double res2 =
        std::max((P2.rowwise().sum().array() - mass).abs().maxCoeff(),
                 (P2.colwise().sum().array() - mass).abs().maxCoeff());
    if (std::isfinite(res2) && res2 < res0) {
      f = f2;
      g = g2;
      return true;
    }
  }
  return false;
}

constexpr int kPolishEvery = 6;
constexpr Eigen::Index kPolishMaxB = 1024;

}  // namespace

TransportPlan sinkhorn_plan(const MatrixXd& cost, const SinkhornOptions& opt) {
  const auto b = cost.rows();
  if (cost.cols() != b) throw ConfigError("cost matrix must be square");
  if (opt.epsilon <= 0.0) throw ConfigError("sinkhorn epsilon must be positive");
  const double log_mass = -std::log(static_cast<double>(b));

  VectorXd f = VectorXd::Zero(b), g = VectorXd::Zero(b);
  MatrixXd cs(b, b), cst(b, b), work(b, b);

  // Annealed epsilon: start coarse, halve down to the target, then alternate
  // at the target until the marginal residual passes, with periodic Newton
  // polishing to cut the slow linear tail. Warm-started potentials make each
  // stage cheap; the iteration budget is shared across stages, Newton
  // corrections included. Potentials are kept pre-divided by the stage eps.
  // Convergence is only declared off a plain f-sweep, whose marginals (and
  // hence the total plan mass) are exact by construction.
  std::vector<double> stages;
  for (double e = 0.5; e > opt.epsilon; e *= 0.5) stages.push_back(e);
  stages.push_back(opt.epsilon);

  int used = 0;
  double residual = 0.0;
  double prev_eps = 1.0;
  const double mass = std::exp(log_mass);
  bool polish = b <= kPolishMaxB;
  int polish_strikes = 0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const double eps = stages[s];
    const bool last = (s + 1 == stages.size());
    f *= prev_eps / eps;
    g *= prev_eps / eps;
    prev_eps = eps;
    cs = cost / eps;
    cst = cs.transpose();
    const int stage_cap = last ? opt.max_iters - used : std::min(8, opt.max_iters - used);
    int since_polish = 0;
    for (int it = 0; it < stage_cap && used < opt.max_iters; ++it) {
      half_update(cs, f, g, log_mass, work);  // cols of cost: g axis
      residual = half_update(cst, g, f, log_mass, work);
      ++used;
      ++since_polish;
      if (!last) continue;
      if (residual < opt.tol) break;
      if (polish && since_polish >= kPolishEvery && used < opt.max_iters) {
        since_polish = 0;
        ++used;
        if (newton_polish(cs, f, g, mass)) {
          polish_strikes = 0;
        } else if (++polish_strikes >= 2) {
          polish = false;
        }
      }
    }
    if (last && residual >= opt.tol)
      throw NumericalError("sinkhorn did not converge: residual " +
                           std::to_string(residual) + " after " +
                           std::to_string(used) + " iterations");
  }

  TransportPlan out;
  work = ((-cs).colwise() + f).rowwise() + g.transpose();
  out.plan = work.array().exp();
  out.iterations = used;
  out.residual = residual;
  out.entropy = -(out.plan.array() * (out.plan.array() + 1e-300).log()).sum();
  return out;
}

TransportAssignment harden_assignment(const TransportPlan& tp, const MatrixXd& cost) {
  const auto b = tp.plan.rows();
  TransportAssignment out;
  out.target_index.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    int best = 0;
    double best_val = tp.plan(i, 0);
    for (Eigen::Index j = 1; j < b; ++j) {
      if (tp.plan(i, j) > best_val) {
        best_val = tp.plan(i, j);
        best = static_cast<int>(j);
      }
    }
    out.target_index[i] = best;
    out.total_cost += cost(i, best);
  }
  out.plan_entropy = tp.entropy;
  return out;
}

double brute_force_assignment_cost(const MatrixXd& cost) {
  const auto b = cost.rows();
  if (b > 9) throw ConfigError("brute force limited to B <= 9");
  std::vector<int> perm(b);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) c += cost(i, perm[i]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace geoflow
