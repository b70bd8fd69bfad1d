#include <doctest.h>

#include <cmath>
#include <vector>

#include "geoflow/rng.hpp"
#include "geoflow/vmf.hpp"

using namespace geoflow;

namespace {

VectorXd unit3(double x, double y, double z) {
  VectorXd v(3);
  v << x, y, z;
  return UnitVector(v).vec();
}

// Two-component mixture with well-separated matched modes.
PairedMixture two_modes(double kappa) {
  return PairedMixture({0.5, 0.5}, {unit3(0, 0, 1), unit3(1, 0, 0)},
                       {unit3(0, 1, 0), unit3(0, 0, -1)}, {kappa, kappa},
                       {kappa, kappa});
}

}  // namespace

TEST_CASE("vmf density constants") {
  const VectorXd mu = unit3(0, 0, 1);
  // kappa = 0 is the uniform density 1/(4 pi) everywhere.
  CHECK(vmf_log_density(unit3(1, 0, 0), mu, 0.0) ==
        doctest::Approx(-std::log(4.0 * M_PI)).epsilon(1e-14));
  CHECK(vmf_log_density(mu, mu, 0.0) ==
        doctest::Approx(-std::log(4.0 * M_PI)).epsilon(1e-14));
  // At the mode with kappa = 1, the naive normalizer formula is stable
  // enough to serve as an independent reference.
  CHECK(vmf_log_density(mu, mu, 1.0) ==
        doctest::Approx(std::log(1.0 / (4.0 * M_PI * std::sinh(1.0))) + 1.0)
            .epsilon(1e-12));
  CHECK(vmf_log_density(mu, mu, 1.0) == doctest::Approx(std::log(0.18405)).epsilon(1e-4));
  CHECK_THROWS_AS(vmf_log_density(mu, mu, -1.0), ConfigError);
}

TEST_CASE("vmf density integrates to one") {
  Rng rng(31);
  for (const double kappa : {2.0, 5.0}) {
    const VectorXd mu = unit3(0.3, -0.5, 0.8);
    double acc = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
      const VectorXd x = sample_uniform_sphere(3, rng);
      acc += std::exp(vmf_log_density(x, mu, kappa));
    }
    // E_uniform[p] * area = integral of the density.
    CHECK(acc / n * 4.0 * M_PI == doctest::Approx(1.0).epsilon(0.01));
  }
}

TEST_CASE("vmf sampler matches its density: colatitude chi-square") {
  const double kappa = 20.0;
  const VectorXd mu = unit3(0, 0, 1);
  Rng rng(32);
  const int n = 100000, bins = 20;
  // Equal-probability bin edges for w = cos(angle): CDF(w) proportional to
  // exp(kappa (w - 1)).
  std::vector<int> count(bins, 0);
  const double e2k = std::exp(-2.0 * kappa);
  for (int i = 0; i < n; ++i) {
    const double w = sample_vmf(mu, kappa, rng).dot(mu);
    const double p = (std::exp(kappa * (w - 1.0)) - e2k) / (1.0 - e2k);
    int b = static_cast<int>(p * bins);
    if (b >= bins) b = bins - 1;
    if (b < 0) b = 0;
    ++count[b];
  }
  double chi2 = 0.0;
  const double expect = static_cast<double>(n) / bins;
  for (int b = 0; b < bins; ++b)
    chi2 += (count[b] - expect) * (count[b] - expect) / expect;
  CHECK(chi2 < 43.82);  // chi-square, 19 dof, p = 0.001
}

TEST_CASE("vmf sampler azimuth is uniform") {
  const VectorXd mu = unit3(0, 0, 1);
  Rng rng(33);
  const int n = 100000, bins = 20;
  std::vector<int> count(bins, 0);
  for (int i = 0; i < n; ++i) {
    const VectorXd x = sample_vmf(mu, 8.0, rng);
    const double a = std::atan2(x[1], x[0]);  // (-pi, pi]
    int b = static_cast<int>((a + M_PI) / (2 * M_PI) * bins);
    if (b >= bins) b = bins - 1;
    ++count[b];
  }
  double chi2 = 0.0;
  const double expect = static_cast<double>(n) / bins;
  for (int b = 0; b < bins; ++b)
    chi2 += (count[b] - expect) * (count[b] - expect) / expect;
  CHECK(chi2 < 43.82);
}

TEST_CASE("vmf sampler resultant length and mean direction") {
  const double kappa = 20.0;
  const VectorXd mu = unit3(0.6, 0.0, 0.8);
  Rng rng(34);
  const int n = 100000;
  VectorXd mean = VectorXd::Zero(3);
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    const VectorXd x = sample_vmf(mu, kappa, rng);
    mean += x;
    wsum += x.dot(mu);
  }
  mean /= n;
  CHECK(wsum / n == doctest::Approx(vmf_mean_resultant(kappa)).epsilon(1e-3));
  CHECK(std::acos(clamp_unit(mean.normalized().dot(mu))) < 0.01);
  CHECK(mean.norm() == doctest::Approx(vmf_mean_resultant(kappa)).epsilon(1e-2));
}

TEST_CASE("mean resultant limits") {
  CHECK(vmf_mean_resultant(0.0) == 0.0);
  CHECK(vmf_mean_resultant(1e-5) == doctest::Approx(1e-5 / 3.0).epsilon(1e-6));
  // coth(k) - 1/k, straight evaluation at moderate kappa.
  CHECK(vmf_mean_resultant(5.0) ==
        doctest::Approx(1.0 / std::tanh(5.0) - 0.2).epsilon(1e-12));
}

TEST_CASE("oracle chain rule is exact") {
  const PairedMixture m = default_mixture();
  Rng rng(35);
  for (int i = 0; i < 200; ++i) {
    const ProductPoint z = m.sample_pair(rng);
    const OracleLogs o = m.oracle_logs(z);
    CHECK(std::abs(o.joint - (o.marg_i + o.cond_t_given_i)) < 1e-12);
    CHECK(std::abs(o.joint - (o.marg_t + o.cond_i_given_t)) < 1e-12);
    CHECK(std::abs(o.pmi - (o.joint - o.marg_i - o.marg_t)) < 1e-12);
    CHECK(o.marg_i == doctest::Approx(m.log_marginal_image(z.image)).epsilon(1e-15));
    CHECK(o.marg_t == doctest::Approx(m.log_marginal_text(z.text)).epsilon(1e-15));
  }
}

TEST_CASE("single-component mixtures have zero pmi") {
  Rng rng(36);
  for (const double kappa : {0.0, 3.0, 7.0}) {
    const PairedMixture m({1.0}, {unit3(0, 0, 1)}, {unit3(1, 0, 0)}, {kappa},
                          {kappa});
    for (int i = 0; i < 50; ++i) {
      const ProductPoint z{sample_uniform_sphere(3, rng),
                           sample_uniform_sphere(3, rng)};
      CHECK(std::abs(m.oracle_logs(z).pmi) < 1e-12);
    }
  }
}

TEST_CASE("two-mode pmi signs, marginals validated by monte carlo") {
  const double kappa = 10.0;
  const PairedMixture m = two_modes(kappa);
  const ProductPoint matched{unit3(0.05, 0, 1), unit3(0.05, 1, 0)};
  const ProductPoint crossed{unit3(0.05, 0, 1), unit3(0.05, 0, -1)};
  CHECK(m.oracle_logs(matched).pmi > 0.5);
  CHECK(m.oracle_logs(crossed).pmi < -0.5);

  // Independent check of the closed-form marginal: integrate the joint over
  // the other block with uniform monte carlo.
  Rng rng(37);
  const int n = 1000000;
  double acc_i = 0.0, acc_t = 0.0;
  for (int i = 0; i < n; ++i) {
    const VectorXd u = sample_uniform_sphere(3, rng);
    acc_i += std::exp(m.log_joint({matched.image, u}));
    acc_t += std::exp(m.log_joint({u, matched.text}));
  }
  const double mc_marg_i = std::log(acc_i / n * 4.0 * M_PI);
  const double mc_marg_t = std::log(acc_t / n * 4.0 * M_PI);
  CHECK(std::abs(std::exp(mc_marg_i - m.log_marginal_image(matched.image)) - 1.0) <
        0.02);
  CHECK(std::abs(std::exp(mc_marg_t - m.log_marginal_text(matched.text)) - 1.0) <
        0.02);
}

TEST_CASE("pair sampler hits the mixture structure") {
  const PairedMixture m = two_modes(20.0);
  Rng rng(38);
  const int n = 20000;
  int near_first = 0, matched = 0;
  for (int i = 0; i < n; ++i) {
    const ProductPoint z = m.sample_pair(rng);
    const bool img_first = z.image.dot(m.image_means()[0]) > 0.7;
    const bool txt_first = z.text.dot(m.text_means()[0]) > 0.7;
    near_first += img_first;
    matched += img_first == txt_first;
  }
  // Half the mass sits on each component, and blocks stay paired.
  CHECK(std::abs(near_first / static_cast<double>(n) - 0.5) < 0.02);
  CHECK(matched > static_cast<int>(0.99 * n));
}

TEST_CASE("conditional sampling follows the component posterior") {
  const PairedMixture m = two_modes(20.0);
  Rng rng(39);
  const VectorXd x = m.image_means()[0];
  VectorXd mean = VectorXd::Zero(3);
  for (int i = 0; i < 5000; ++i) mean += m.sample_text_given_image(x, rng);
  mean.normalize();
  CHECK(std::acos(clamp_unit(mean.dot(m.text_means()[0]))) < 0.05);
  CHECK((m.conditional_text_mean_direction(x) - m.text_means()[0]).norm() < 1e-6);

  const VectorXd y = m.text_means()[1];
  VectorXd imean = VectorXd::Zero(3);
  for (int i = 0; i < 5000; ++i) imean += m.sample_image_given_text(y, rng);
  imean.normalize();
  CHECK(std::acos(clamp_unit(imean.dot(m.image_means()[1]))) < 0.05);
}

TEST_CASE("mixture constructor validation") {
  const VectorXd a = unit3(0, 0, 1), b = unit3(1, 0, 0);
  CHECK_THROWS_AS(PairedMixture({}, {}, {}, {}, {}), ConfigError);
  CHECK_THROWS_AS(PairedMixture({0.5, 0.4}, {a, b}, {a, b}, {1, 1}, {1, 1}),
                  ConfigError);
  CHECK_THROWS_AS(PairedMixture({0.5, 0.5}, {a}, {a, b}, {1, 1}, {1, 1}),
                  ConfigError);
  CHECK_THROWS_AS(PairedMixture({1.0}, {a}, {b}, {-1}, {1}), ConfigError);
  CHECK_THROWS_AS(PairedMixture({-0.5, 1.5}, {a, b}, {a, b}, {1, 1}, {1, 1}),
                  ConfigError);
  VectorXd bad4(4);
  bad4 << 1, 0, 0, 0;
  CHECK_THROWS_AS(PairedMixture({1.0}, {bad4}, {b}, {1}, {1}), ConfigError);
}

TEST_CASE("bundled mixtures have the documented shape") {
  const PairedMixture d = default_mixture();
  CHECK(d.components() == 4);
  for (double w : d.weights()) CHECK(w == doctest::Approx(0.25));
  for (double k : d.image_kappas()) CHECK(k == 20.0);
  // Tetrahedral image means: every distinct pair at the same obtuse angle.
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      CHECK(d.image_means()[i].dot(d.image_means()[j]) ==
            doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
      // Text means are a rigid rotation of the image means.
      CHECK(d.text_means()[i].dot(d.text_means()[j]) ==
            doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
    }

  const PairedMixture s = sharpness_mixture();
  CHECK(s.components() == 8);
  for (int k = 0; k + 1 < 8; ++k)
    CHECK(s.text_kappas()[k] == doctest::Approx(2.0 * s.text_kappas()[k + 1]));
  CHECK(s.text_kappas()[0] == 256.0);
  CHECK(s.text_kappas()[7] == 2.0);
}
