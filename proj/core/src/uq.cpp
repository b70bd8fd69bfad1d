#include "geoflow/uq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geoflow {

namespace {

double entropy_nats(const VectorXd& probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  return h;
}

// Average ranks, ties share the mean rank.
std::vector<double> ranks_of(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

GalleryPosterior gallery_posterior(const MatrixXd& samples, const MatrixXd& gallery,
                                   double kappa) {
  if (kappa < 0.0) throw ConfigError("kappa must be nonnegative");
  const auto m = samples.cols();
  const auto n = gallery.cols();
  if (m < 1 || n < 1) throw ConfigError("gallery posterior needs samples and items");

  const MatrixXd sim = kappa * (gallery.transpose() * samples);  // N x M
  GalleryPosterior out;
  out.scores.resize(n);
  const double log_m = std::log(static_cast<double>(m));
  for (Eigen::Index j = 0; j < n; ++j) {
    const double mx = sim.row(j).maxCoeff();
    out.scores[j] = mx + std::log((sim.row(j).array() - mx).exp().sum()) - log_m;
  }
  const double smax = out.scores.maxCoeff();
  VectorXd w = (out.scores.array() - smax).exp();
  out.probs = w / w.sum();
  out.entropy = entropy_nats(out.probs);
  return out;
}

double fano_bound(double error_rate, int n_items) {
  if (n_items < 1) throw ConfigError("gallery must be nonempty");
  if (error_rate < 0.0 || error_rate > 1.0)
    throw ConfigError("error rate must be in [0, 1]");
  if (n_items == 1) return 0.0;
  double h2 = 0.0;
  if (error_rate > 0.0 && error_rate < 1.0)
    h2 = -error_rate * std::log(error_rate) -
         (1.0 - error_rate) * std::log(1.0 - error_rate);
  return h2 + error_rate * std::log(static_cast<double>(n_items - 1));
}

double fano_inverse(double entropy, int n_items) {
  if (n_items < 1) throw ConfigError("gallery must be nonempty");
  if (n_items == 1) {
    if (entropy > 1e-9) throw ConfigError("entropy exceeds log N");
    return 0.0;
  }
  const double log_n = std::log(static_cast<double>(n_items));
  if (entropy > log_n + 1e-9) throw ConfigError("entropy exceeds log N");
  if (entropy <= 0.0) return 0.0;
  const double r_max = (n_items - 1.0) / n_items;
  if (entropy >= fano_bound(r_max, n_items)) return r_max;
  double lo = 0.0, hi = r_max;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (fano_bound(mid, n_items) < entropy ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

CalibrationReport calibration_report(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& correct,
                                     int n_bins) {
  const std::size_t n = scores.size();
  if (correct.size() != n) throw ConfigError("scores and correctness must align");
  if (n_bins < 2 || n < static_cast<std::size_t>(n_bins))
    throw ConfigError("need at least n_bins samples and 2 bins");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  CalibrationReport rep;
  rep.degenerate_scores =
      scores[idx.front()] == scores[idx.back()];

  const std::size_t base = n / n_bins, rem = n % n_bins;
  std::size_t pos = 0;
  std::vector<double> bin_index;
  for (int b = 0; b < n_bins; ++b) {
    const std::size_t len = base + (static_cast<std::size_t>(b) < rem ? 1 : 0);
    double hits = 0.0, ssum = 0.0;
    for (std::size_t k = 0; k < len; ++k, ++pos) {
      hits += correct[idx[pos]];
      ssum += scores[idx[pos]];
    }
    rep.bin_count.push_back(static_cast<int>(len));
    rep.bin_recall.push_back(hits / len);
    rep.bin_score_mean.push_back(ssum / len);
    bin_index.push_back(b);
  }

  rep.spearman = rep.degenerate_scores
                     ? std::nullopt
                     : geoflow::spearman(bin_index, rep.bin_recall);

  // Least-squares line of bin error on bin index.
  const double nb = n_bins;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const double y = 1.0 - rep.bin_recall[b];
    sx += b;
    sy += y;
    sxx += static_cast<double>(b) * b;
    sxy += b * y;
  }
  const double beta = (nb * sxy - sx * sy) / (nb * sxx - sx * sx);
  const double alpha = (sy - beta * sx) / nb;
  double ss_res = 0.0, ss_tot = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const double y = 1.0 - rep.bin_recall[b];
    ss_res += (y - (alpha + beta * b)) * (y - (alpha + beta * b));
    ss_tot += (y - sy / nb) * (y - sy / nb);
  }
  rep.r2 = ss_tot < 1e-15 ? 1.0 : 1.0 - ss_res / ss_tot;
  return rep;
}

SelectiveCurve selective_curve(const std::vector<double>& scores,
                               const std::vector<std::uint8_t>& correct) {
  const std::size_t n = scores.size();
  if (correct.size() != n) throw ConfigError("scores and correctness must align");
  if (n == 0) throw ConfigError("selective curve needs samples");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  SelectiveCurve out;
  double acc_sum = 0.0;
  for (int level = 10; level >= 1; --level) {
    const double c = 0.1 * level;
    std::size_t kept = static_cast<std::size_t>(std::llround(c * n));
    kept = std::max<std::size_t>(1, std::min(kept, n));
    double hits = 0.0;
    for (std::size_t k = 0; k < kept; ++k) hits += correct[idx[k]];
    const double acc = hits / kept;
    out.points.push_back({c, acc});
    acc_sum += acc;
  }
  out.ausac = acc_sum / 10.0;
  return out;
}

std::optional<double> spearman(const std::vector<double>& a,
                               const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("spearman needs pairs");
  const std::vector<double> ra = ranks_of(a), rb = ranks_of(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va < 1e-15 || vb < 1e-15) return std::nullopt;
  return cov / std::sqrt(va * vb);
}

std::vector<EntropyRecord> retrieval_entropy_pipeline(
    const NetParams& p, MaskKind direction, const MatrixXd& queries,
    const MatrixXd& gallery, const std::vector<int>& true_index, int n_samples,
    double kappa, const SolverConfig& solver) {
  if (direction == MaskKind::Joint)
    throw ConfigError("retrieval entropy needs a conditional direction");
  const auto nq = queries.cols();
  if (!true_index.empty() && static_cast<Eigen::Index>(true_index.size()) != nq)
    throw ConfigError("true_index must align with queries");
  if (n_samples < 1) throw ConfigError("need at least one sample per query");

  std::vector<EntropyRecord> out(nq);
  // Chunked so activation memory stays bounded; per-column tags make the
  // result independent of the chunking.
  const Eigen::Index chunk = std::max<Eigen::Index>(1, 4096 / n_samples);
  const int d = p.cfg.embed_dim;
  for (Eigen::Index q0 = 0; q0 < nq; q0 += chunk) {
    const Eigen::Index qn = std::min(chunk, nq - q0);
    MatrixXd cond(d, qn * n_samples);
    std::vector<std::uint64_t> tags(qn * n_samples);
    for (Eigen::Index q = 0; q < qn; ++q)
      for (int m = 0; m < n_samples; ++m) {
        cond.col(q * n_samples + m) = queries.col(q0 + q);
        tags[q * n_samples + m] =
            static_cast<std::uint64_t>(q0 + q) * n_samples + m;
      }
    const SampleBatch s =
        sample(p, direction, &cond, qn * n_samples, solver, tags);
    const MatrixXd& gen = direction == MaskKind::ImageToText ? s.txt : s.img;
    for (Eigen::Index q = 0; q < qn; ++q) {
      const GalleryPosterior post = gallery_posterior(
          gen.middleCols(q * n_samples, n_samples), gallery, kappa);
      EntropyRecord& r = out[q0 + q];
      r.entropy = post.entropy;
      r.fano_r_min =
          fano_inverse(std::min(post.entropy,
                                std::log(static_cast<double>(gallery.cols()))),
                       static_cast<int>(gallery.cols()));
      if (!true_index.empty() && true_index[q0 + q] >= 0) {
        const double true_p = post.probs[true_index[q0 + q]];
        int rank = 1;
        for (Eigen::Index j = 0; j < post.probs.size(); ++j)
          if (post.probs[j] > true_p) ++rank;
        r.rank_of_true = rank;
      }
    }
  }
  return out;
}

}  // namespace geoflow
