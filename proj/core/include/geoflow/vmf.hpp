#pragma once

#include <vector>

#include <Eigen/Dense>

#include "geoflow/common.hpp"
#include "geoflow/rng.hpp"
#include "geoflow/sphere.hpp"

namespace geoflow {

// von Mises-Fisher density on S^2: p(x) = C(kappa) exp(kappa <x, mean>),
// C(kappa) = kappa / (4 pi sinh kappa), C(0) = 1/(4 pi).
double vmf_log_density(const VectorXd& x, const VectorXd& mean, double kappa);

// Inverse-CDF sampler: w = cos(angle to mean) has CDF proportional to
// exp(kappa (w - 1)); draws one uniform for w and Gaussians for the
// tangential direction.
VectorXd sample_vmf(const VectorXd& mean, double kappa, Rng& rng);

// Mean resultant length coth(kappa) - 1/kappa of a vMF on S^2.
double vmf_mean_resultant(double kappa);

// Exact reference log-densities for one pair under the mixture.
struct OracleLogs {
  double joint = 0.0;
  double marg_i = 0.0;
  double marg_t = 0.0;
  double cond_t_given_i = 0.0;  // log p(text | image)
  double cond_i_given_t = 0.0;
  double pmi = 0.0;
};

// Paired mixture over S^2 x S^2: component k emits an image from
// vMF(mu[k], kappa_img[k]) and a text from vMF(nu[k], kappa_txt[k]).
// Marginals, conditionals and PMI follow by exact chain rule.
class PairedMixture {
 public:
  PairedMixture(std::vector<double> weights, std::vector<VectorXd> mu,
                std::vector<VectorXd> nu, std::vector<double> kappa_img,
                std::vector<double> kappa_txt);

  int components() const { return static_cast<int>(weights_.size()); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<VectorXd>& image_means() const { return mu_; }
  const std::vector<VectorXd>& text_means() const { return nu_; }
  const std::vector<double>& image_kappas() const { return kappa_img_; }
  const std::vector<double>& text_kappas() const { return kappa_txt_; }

  double log_joint(const ProductPoint& z) const;
  double log_marginal_image(const VectorXd& x) const;
  double log_marginal_text(const VectorXd& y) const;
  OracleLogs oracle_logs(const ProductPoint& z) const;

  ProductPoint sample_pair(Rng& rng) const;
  // Draw from p(text | image = x) (respectively p(image | text = y)).
  VectorXd sample_text_given_image(const VectorXd& x, Rng& rng) const;
  VectorXd sample_image_given_text(const VectorXd& y, Rng& rng) const;

  // Direction of E[text | image = x], exact under the mixture.
  VectorXd conditional_text_mean_direction(const VectorXd& x) const;

 private:
  std::vector<double> posterior_given_image(const VectorXd& x) const;
  std::vector<double> posterior_given_text(const VectorXd& y) const;
  int draw_component(const std::vector<double>& w, Rng& rng) const;

  std::vector<double> weights_;
  std::vector<VectorXd> mu_, nu_;
  std::vector<double> kappa_img_, kappa_txt_;
};

// Four well-separated components, both streams at kappa 20; text means are
// the image means under a fixed small rotation.
PairedMixture default_mixture();

// Eight components whose text sharpness spans a wide geometric range while
// the image side stays fixed; used to probe uncertainty calibration.
PairedMixture sharpness_mixture();

}  // namespace geoflow
