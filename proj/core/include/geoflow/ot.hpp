#pragma once

#include <vector>

#include <Eigen/Dense>

#include "geoflow/common.hpp"

namespace geoflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SinkhornOptions {
  double epsilon = 0.05;
  int max_iters = 1000;
  double tol = 1e-6;  // max abs deviation of any row/col sum from 1/B
};

struct TransportPlan {
  MatrixXd plan;   // B x B, nonnegative, total mass 1
  int iterations = 0;
  double residual = 0.0;
  double entropy = 0.0;  // -sum P log P
};

struct TransportAssignment {
  std::vector<int> target_index;  // row i of batch 0 pairs with this row of batch 1
  double total_cost = 0.0;        // sum_i cost(i, target_index[i])
  double plan_entropy = 0.0;
};

// Sum of the two per-sphere angles between paired noise draws and data
// points. Columns are samples; blocks must be column-normalised.
MatrixXd product_geodesic_cost(const MatrixXd& img0, const MatrixXd& txt0,
                               const MatrixXd& img1, const MatrixXd& txt1);

// Entropic OT between uniform marginals, solved in the log domain with
// stepped epsilon annealing for fast convergence at small epsilon. Throws
// NumericalError (carrying the residual) if the marginal tolerance is not
// reached within max_iters total iterations.
TransportPlan sinkhorn_plan(const MatrixXd& cost, const SinkhornOptions& opt = {});

// Row-argmax pairing; exact ties resolve to the lowest column index.
TransportAssignment harden_assignment(const TransportPlan& plan, const MatrixXd& cost);

// Exact optimum over permutations, for small instances only (B <= 9).
double brute_force_assignment_cost(const MatrixXd& cost);

}  // namespace geoflow
