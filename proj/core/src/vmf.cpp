#include "geoflow/vmf.hpp"

#include <cmath>

namespace geoflow {

namespace {

constexpr double kLog4Pi = 2.5310242469692907930;  // log(4 pi)

double log_norm_const(double kappa) {
  if (kappa < 1e-8) return -kLog4Pi;
  return std::log(kappa) - kLog4Pi - kappa - std::log1p(-std::exp(-2.0 * kappa)) +
         std::log(2.0);
}

double logsumexp(const std::vector<double>& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

double vmf_log_density(const VectorXd& x, const VectorXd& mean, double kappa) {
  if (kappa < 0.0) throw ConfigError("vmf kappa must be nonnegative");
  return log_norm_const(kappa) + kappa * x.dot(mean);
}

VectorXd sample_vmf(const VectorXd& mean, double kappa, Rng& rng) {
  if (mean.size() != 3) throw ConfigError("vmf sampler is specific to S^2");
  const double u = rng.uniform();
  double w;
  if (kappa < 1e-8) {
    w = 2.0 * u - 1.0;
  } else {
    w = 1.0 + std::log(u + (1.0 - u) * std::exp(-2.0 * kappa)) / kappa;
  }
  VectorXd perp(3);
  double n;
  do {
    for (int i = 0; i < 3; ++i) perp[i] = rng.normal();
    perp -= perp.dot(mean) * mean;
    n = perp.norm();
  } while (n < 1e-12);
  perp /= n;
  return w * mean + std::sqrt(std::max(0.0, 1.0 - w * w)) * perp;
}

double vmf_mean_resultant(double kappa) {
  if (kappa < 1e-4) return kappa / 3.0 - kappa * kappa * kappa / 45.0;
  const double e = std::exp(-2.0 * kappa);
  return (1.0 + e) / (1.0 - e) - 1.0 / kappa;
}

PairedMixture::PairedMixture(std::vector<double> weights, std::vector<VectorXd> mu,
                             std::vector<VectorXd> nu, std::vector<double> kappa_img,
                             std::vector<double> kappa_txt)
    : weights_(std::move(weights)),
      mu_(std::move(mu)),
      nu_(std::move(nu)),
      kappa_img_(std::move(kappa_img)),
      kappa_txt_(std::move(kappa_txt)) {
  const std::size_t k = weights_.size();
  if (k == 0) throw ConfigError("mixture needs at least one component");
  if (mu_.size() != k || nu_.size() != k || kappa_img_.size() != k ||
      kappa_txt_.size() != k)
    throw ConfigError("mixture component lists have mismatched lengths");
  double sum = 0.0;
  for (double w : weights_) {
    if (w <= 0.0) throw ConfigError("mixture weights must be positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("mixture weights must sum to 1 (got " + std::to_string(sum) + ")");
  for (std::size_t i = 0; i < k; ++i) {
    if (mu_[i].size() != 3 || nu_[i].size() != 3)
      throw ConfigError("mixture means must live on S^2");
    if (kappa_img_[i] < 0.0 || kappa_txt_[i] < 0.0)
      throw ConfigError("mixture concentrations must be nonnegative");
    mu_[i] = UnitVector(mu_[i]).vec();
    nu_[i] = UnitVector(nu_[i]).vec();
  }
}

double PairedMixture::log_joint(const ProductPoint& z) const {
  std::vector<double> terms(weights_.size());
  for (std::size_t k = 0; k < weights_.size(); ++k)
    terms[k] = std::log(weights_[k]) + vmf_log_density(z.image, mu_[k], kappa_img_[k]) +
               vmf_log_density(z.text, nu_[k], kappa_txt_[k]);
  return logsumexp(terms);
}

double PairedMixture::log_marginal_image(const VectorXd& x) const {
  std::vector<double> terms(weights_.size());
  for (std::size_t k = 0; k < weights_.size(); ++k)
    terms[k] = std::log(weights_[k]) + vmf_log_density(x, mu_[k], kappa_img_[k]);
  return logsumexp(terms);
}

double PairedMixture::log_marginal_text(const VectorXd& y) const {
  std::vector<double> terms(weights_.size());
  for (std::size_t k = 0; k < weights_.size(); ++k)
    terms[k] = std::log(weights_[k]) + vmf_log_density(y, nu_[k], kappa_txt_[k]);
  return logsumexp(terms);
}

OracleLogs PairedMixture::oracle_logs(const ProductPoint& z) const {
  OracleLogs o;
  o.joint = log_joint(z);
  o.marg_i = log_marginal_image(z.image);
  o.marg_t = log_marginal_text(z.text);
  o.cond_t_given_i = o.joint - o.marg_i;
  o.cond_i_given_t = o.joint - o.marg_t;
  o.pmi = o.joint - o.marg_i - o.marg_t;
  return o;
}

std::vector<double> PairedMixture::posterior_given_image(const VectorXd& x) const {
  std::vector<double> lw(weights_.size());
  for (std::size_t k = 0; k < weights_.size(); ++k)
    lw[k] = std::log(weights_[k]) + vmf_log_density(x, mu_[k], kappa_img_[k]);
  const double z = logsumexp(lw);
  for (double& v : lw) v = std::exp(v - z);
  return lw;
}

std::vector<double> PairedMixture::posterior_given_text(const VectorXd& y) const {
  std::vector<double> lw(weights_.size());
  for (std::size_t k = 0; k < weights_.size(); ++k)
    lw[k] = std::log(weights_[k]) + vmf_log_density(y, nu_[k], kappa_txt_[k]);
  const double z = logsumexp(lw);
  for (double& v : lw) v = std::exp(v - z);
  return lw;
}

int PairedMixture::draw_component(const std::vector<double>& w, Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    acc += w[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(w.size()) - 1;
}

ProductPoint PairedMixture::sample_pair(Rng& rng) const {
  const int k = draw_component(weights_, rng);
  ProductPoint z;
  z.image = sample_vmf(mu_[k], kappa_img_[k], rng);
  z.text = sample_vmf(nu_[k], kappa_txt_[k], rng);
  return z;
}

VectorXd PairedMixture::sample_text_given_image(const VectorXd& x, Rng& rng) const {
  const int k = draw_component(posterior_given_image(x), rng);
  return sample_vmf(nu_[k], kappa_txt_[k], rng);
}

VectorXd PairedMixture::sample_image_given_text(const VectorXd& y, Rng& rng) const {
  const int k = draw_component(posterior_given_text(y), rng);
  return sample_vmf(mu_[k], kappa_img_[k], rng);
}

VectorXd PairedMixture::conditional_text_mean_direction(const VectorXd& x) const {
  const std::vector<double> w = posterior_given_image(x);
  VectorXd m = VectorXd::Zero(3);
  for (std::size_t k = 0; k < w.size(); ++k)
    m += w[k] * vmf_mean_resultant(kappa_txt_[k]) * nu_[k];
  return UnitVector(m).vec();
}

namespace {

Eigen::Matrix3d small_rotation() {
  // Fixed proper rotation standing in for the image/text modality gap.
  return Eigen::AngleAxisd(0.25, Eigen::Vector3d(0, 0, 1).normalized())
      .toRotationMatrix();
}

}  // namespace

PairedMixture default_mixture() {
  const double s = 1.0 / std::sqrt(3.0);
  std::vector<VectorXd> mu;
  for (auto [a, b, c] : {std::array{1., 1., 1.}, std::array{1., -1., -1.},
                         std::array{-1., 1., -1.}, std::array{-1., -1., 1.}}) {
    VectorXd m(3);
    m << a * s, b * s, c * s;
    mu.push_back(m);
  }
  const Eigen::Matrix3d r = small_rotation();
  std::vector<VectorXd> nu;
  for (const auto& m : mu) nu.push_back(r * m);
  return PairedMixture(std::vector<double>(4, 0.25), mu, nu,
                       std::vector<double>(4, 20.0), std::vector<double>(4, 20.0));
}

PairedMixture sharpness_mixture() {
  const double s = 1.0 / std::sqrt(3.0);
  std::vector<VectorXd> mu;
  for (int sx : {1, -1})
    for (int sy : {1, -1})
      for (int sz : {1, -1}) {
        VectorXd m(3);
        m << sx * s, sy * s, sz * s;
        mu.push_back(m);
      }
  const Eigen::Matrix3d r = small_rotation();
  std::vector<VectorXd> nu;
  for (const auto& m : mu) nu.push_back(r * m);
  std::vector<double> kt;
  for (double k = 256.0; kt.size() < 8; k *= 0.5) kt.push_back(k);
  return PairedMixture(std::vector<double>(8, 0.125), mu, nu,
                       std::vector<double>(8, 24.0), kt);
}

}  // namespace geoflow
