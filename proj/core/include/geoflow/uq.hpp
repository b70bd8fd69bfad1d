#pragma once

#include <optional>
#include <vector>

#include "geoflow/runtime.hpp"

namespace geoflow {

// Soft assignment of M generated endpoints to N gallery items: per-item
// score log (1/M) sum_m exp(kappa <g_j, e_m>), softmax over items, and the
// entropy (nats) of that distribution. kappa = 0 degrades to uniform.
struct GalleryPosterior {
  VectorXd scores;  // N log-mean-exp matching scores
  VectorXd probs;   // softmax of scores
  double entropy = 0.0;
};

GalleryPosterior gallery_posterior(const MatrixXd& samples, const MatrixXd& gallery,
                                   double kappa);

// Fano forward bound H2(r) + r log(N-1), increasing on [0, (N-1)/N].
double fano_bound(double error_rate, int n_items);

// Smallest achievable error rate compatible with the posterior entropy:
// inverts the forward bound by bisection to 1e-10. Entropy above log N (plus
// slack) is rejected; N = 1 pins both to zero.
double fano_inverse(double entropy, int n_items);

struct CalibrationReport {
  std::vector<int> bin_count;
  std::vector<double> bin_score_mean;
  std::vector<double> bin_recall;
  std::optional<double> spearman;  // bin index vs bin recall; empty if degenerate
  double r2 = 0.0;                 // linear fit of bin error (1 - recall) on bin index
  bool degenerate_scores = false;  // all scores equal: ranking carries no signal
};

// Equal-frequency binning by ascending score (stable ties), remainder
// spread over the leading bins.
CalibrationReport calibration_report(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& correct,
                                     int n_bins = 10);

struct SelectivePoint {
  double coverage;
  double accuracy;
};

struct SelectiveCurve {
  std::vector<SelectivePoint> points;  // coverage 1.0 down to 0.1
  double ausac = 0.0;                  // mean accuracy over the grid
};

// Keeps the round(c*n) lowest-score (most confident) samples at each
// coverage c in {1.0, 0.9, ..., 0.1}; ties keep input order.
SelectiveCurve selective_curve(const std::vector<double>& scores,
                               const std::vector<std::uint8_t>& correct);

// Tie-aware Spearman rank correlation; empty when either side is constant.
std::optional<double> spearman(const std::vector<double>& a,
                               const std::vector<double>& b);

struct EntropyRecord {
  double entropy = 0.0;
  double fano_r_min = 0.0;
  int rank_of_true = -1;  // 1-based rank under the posterior, -1 if unknown
};

// Per query: draw n_samples endpoints from the conditional flow, score the
// gallery, report entropy and the Fano floor. queries holds conditioner
// blocks (direction's source modality), gallery the candidate embeddings of
// the target modality. true_index may be empty.
std::vector<EntropyRecord> retrieval_entropy_pipeline(
    const NetParams& p, MaskKind direction, const MatrixXd& queries,
    const MatrixXd& gallery, const std::vector<int>& true_index, int n_samples,
    double kappa, const SolverConfig& solver);

}  // namespace geoflow
