#include <doctest.h>

#include <cmath>
#include <vector>

#include "geoflow/uq.hpp"
#include "geoflow/vmf.hpp"

using namespace geoflow;
using Eigen::Vector3d;

namespace {

MatrixXd cube_gallery() {
  MatrixXd g(3, 8);
  int j = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) g.col(j++) = Vector3d(sx, sy, sz).normalized();
  return g;
}

NetParams fresh_net(std::uint64_t seed) {
  NetConfig c;
  c.embed_dim = 3;
  c.hidden_dim = 8;
  c.depth = 1;
  c.gate_heads = 2;
  c.dropout_rate = 0.0;
  c.rff_features = 8;
  Rng rng(seed);
  return init_params(c, rng);
}

}  // namespace

TEST_CASE("zero concentration gives a uniform posterior") {
  Rng rng(1);
  MatrixXd samples(3, 40);
  for (int m = 0; m < 40; ++m) samples.col(m) = sample_uniform_sphere(3, rng);
  const GalleryPosterior post = gallery_posterior(samples, cube_gallery(), 0.0);
  for (int j = 0; j < 8; ++j)
    CHECK(post.probs[j] == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(post.entropy == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("coincident samples at extreme concentration collapse the posterior") {
  const MatrixXd gallery = cube_gallery();
  MatrixXd samples(3, 5);
  for (int m = 0; m < 5; ++m) samples.col(m) = gallery.col(3);
  const GalleryPosterior post = gallery_posterior(samples, gallery, 1e4);
  int arg = 0;
  post.probs.maxCoeff(&arg);
  CHECK(arg == 3);
  CHECK(post.entropy < 1e-6);
  CHECK(post.probs[3] > 1.0 - 1e-6);
}

TEST_CASE("single-sample posterior matches a softmax done by hand") {
  MatrixXd gallery(3, 3);
  gallery.col(0) = Vector3d(1, 0, 0);
  gallery.col(1) = Vector3d(0, 1, 0);
  gallery.col(2) = Vector3d(0, 0, 1);
  MatrixXd sample(3, 1);
  sample.col(0) = Vector3d(0.6, 0.8, 0.0);
  const double kappa = 2.5;
  const GalleryPosterior post = gallery_posterior(sample, gallery, kappa);

  Vector3d s(kappa * 0.6, kappa * 0.8, 0.0);
  const double lse = std::log(std::exp(s[0]) + std::exp(s[1]) + std::exp(s[2]));
  double href = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double pj = std::exp(s[j] - lse);
    CHECK(post.probs[j] == doctest::Approx(pj).epsilon(1e-12));
    href -= pj * std::log(pj);
  }
  CHECK(post.entropy == doctest::Approx(href).epsilon(1e-12));
  CHECK_THROWS_AS(gallery_posterior(sample, gallery, -1.0), ConfigError);
}

TEST_CASE("oracle-sharp samples leave little posterior entropy") {
  const MatrixXd gallery = cube_gallery();
  Rng rng(7);
  MatrixXd samples(3, 500);
  for (int m = 0; m < 500; ++m)
    samples.col(m) = sample_vmf(gallery.col(1), 256.0, rng);
  const GalleryPosterior post = gallery_posterior(samples, gallery, 64.0);
  int arg = 0;
  post.probs.maxCoeff(&arg);
  CHECK(arg == 1);
  CHECK(post.entropy < 0.2 * std::log(8.0));
}

TEST_CASE("fano bound endpoints and closed forms") {
  CHECK(fano_bound(0.0, 6) == 0.0);
  // H2(1/2) + (1/2) log 1 = log 2 for a two-item gallery.
  CHECK(fano_bound(0.5, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(fano_inverse(std::log(2.0), 2) == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(fano_inverse(0.0, 6) == 0.0);
  // Single-item galleries have nothing to confuse.
  CHECK(fano_bound(0.0, 1) == 0.0);
  CHECK(fano_inverse(0.0, 1) == 0.0);
  CHECK_THROWS_AS(fano_bound(1.5, 4), ConfigError);
  CHECK_THROWS_AS(fano_bound(0.1, 0), ConfigError);
  CHECK_THROWS_AS(fano_inverse(std::log(4.0) + 1e-3, 4), ConfigError);
}

TEST_CASE("fano inverse undoes the forward bound") {
  for (int n = 2; n <= 10; ++n) {
    const double r_max = (n - 1.0) / n;
    for (double frac : {0.05, 0.2, 0.5, 0.8, 0.95}) {
      const double r = frac * r_max;
      const double h = fano_bound(r, n);
      CHECK(std::abs(fano_inverse(h, n) - r) < 1e-8);
    }
  }
}

TEST_CASE("fano lower-bounds the bayes error on random posteriors") {
  Rng rng(17);
  const int n = 5;
  for (int rep = 0; rep < 100000; ++rep) {
    VectorXd p(n);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      p[j] = -std::log(1.0 - rng.uniform());
      sum += p[j];
    }
    p /= sum;
    double h = 0.0;
    for (int j = 0; j < n; ++j)
      if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
    const double bayes_err = 1.0 - p.maxCoeff();
    // Fano: H(p) <= H2(e) + e log(N-1), so r_min(H) <= bayes error.
    CHECK(h <= fano_bound(bayes_err, n) + 1e-12);
    CHECK(fano_inverse(std::min(h, std::log(static_cast<double>(n))), n) <=
          bayes_err + 1e-8);
  }
}

TEST_CASE("calibration bins split evenly with the remainder up front") {
  std::vector<double> scores;
  std::vector<std::uint8_t> correct;
  Rng rng(3);
  for (int i = 0; i < 103; ++i) {
    scores.push_back(rng.uniform());
    correct.push_back(rng.uniform() < 0.5);
  }
  const CalibrationReport rep = calibration_report(scores, correct, 10);
  REQUIRE(rep.bin_count.size() == 10);
  for (int b = 0; b < 10; ++b) CHECK(rep.bin_count[b] == (b < 3 ? 11 : 10));
  // Bin means ascend with the sort.
  for (int b = 1; b < 10; ++b)
    CHECK(rep.bin_score_mean[b] >= rep.bin_score_mean[b - 1]);
}

TEST_CASE("perfectly ranked scores give spearman -1 and a linear error fit") {
  // Score encodes the bin; recall falls linearly from 1 to 0.1.
  std::vector<double> scores;
  std::vector<std::uint8_t> correct;
  for (int b = 0; b < 10; ++b)
    for (int i = 0; i < 10; ++i) {
      scores.push_back(b);
      correct.push_back(i < 10 - b);
    }
  const CalibrationReport rep = calibration_report(scores, correct, 10);
  REQUIRE(rep.spearman.has_value());
  CHECK(*rep.spearman == doctest::Approx(-1.0).epsilon(1e-12));
  for (int b = 0; b < 10; ++b)
    CHECK(rep.bin_recall[b] == doctest::Approx(1.0 - 0.1 * b).epsilon(1e-12));
  CHECK(rep.r2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(rep.degenerate_scores);
}

TEST_CASE("calibration ranking only depends on the score order") {
  Rng rng(5);
  std::vector<double> scores;
  std::vector<std::uint8_t> correct;
  for (int i = 0; i < 100; ++i) {
    scores.push_back(rng.normal());
    correct.push_back(rng.uniform() < 0.3);
  }
  std::vector<double> warped;
  for (double s : scores) warped.push_back(std::exp(2.0 * s + 1.0));
  const CalibrationReport a = calibration_report(scores, correct, 10);
  const CalibrationReport b = calibration_report(warped, correct, 10);
  for (int j = 0; j < 10; ++j) CHECK(a.bin_recall[j] == b.bin_recall[j]);
  CHECK(a.spearman == b.spearman);
}

TEST_CASE("constant scores are flagged as degenerate") {
  std::vector<double> scores(50, 1.25);
  std::vector<std::uint8_t> correct(50, 0);
  for (int i = 0; i < 25; ++i) correct[i] = 1;
  const CalibrationReport rep = calibration_report(scores, correct, 5);
  CHECK(rep.degenerate_scores);
  CHECK_FALSE(rep.spearman.has_value());
  CHECK_THROWS_AS(calibration_report({1.0, 2.0}, {1}, 2), ConfigError);
  CHECK_THROWS_AS(calibration_report({1.0, 2.0}, {1, 0}, 3), ConfigError);
}

TEST_CASE("selective curve endpoints") {
  std::vector<double> scores;
  std::vector<std::uint8_t> correct;
  // Repeating 4-correct 1-wrong pattern: every coverage multiple of ten
  // keeps exactly 80% hits, so the curve is flat at 0.8.
  for (int i = 0; i < 100; ++i) {
    scores.push_back(i);
    correct.push_back(i % 5 != 4);
  }
  const SelectiveCurve flat = selective_curve(scores, correct);
  REQUIRE(flat.points.size() == 10);
  CHECK(flat.points.front().coverage == doctest::Approx(1.0));
  CHECK(flat.points.back().coverage == doctest::Approx(0.1));
  for (const SelectivePoint& pt : flat.points)
    CHECK(pt.accuracy == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(flat.ausac == doctest::Approx(0.8).epsilon(1e-12));

  const SelectiveCurve perfect =
      selective_curve(scores, std::vector<std::uint8_t>(100, 1));
  CHECK(perfect.ausac == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("informative abstention scores raise the selective area") {
  std::vector<double> scores;
  std::vector<std::uint8_t> correct;
  for (int i = 0; i < 100; ++i) {
    const bool ok = i < 60;
    scores.push_back(ok ? 0.0 : 1.0);  // low score = confident = correct
    correct.push_back(ok);
  }
  const SelectiveCurve curve = selective_curve(scores, correct);
  CHECK(curve.points.front().accuracy == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(curve.points.back().accuracy == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(curve.ausac > 0.6);
  CHECK_THROWS_AS(selective_curve({}, {}), ConfigError);
}

TEST_CASE("spearman handles ties and degenerate inputs") {
  CHECK(*spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(*spearman({1, 2, 3, 4}, {5, 4, 3, 2}) == doctest::Approx(-1.0));
  // Shared tie pattern keeps perfect correlation.
  CHECK(*spearman({1, 1, 2}, {3, 3, 5}) == doctest::Approx(1.0));
  CHECK_FALSE(spearman({1, 1, 1}, {1, 2, 3}).has_value());
  CHECK_THROWS_AS(spearman({1.0}, {2.0}), ConfigError);
  CHECK_THROWS_AS(spearman({1.0, 2.0}, {1.0}), ConfigError);
}

TEST_CASE("an untrained flow retrieves with near-maximal entropy") {
  const NetParams p = fresh_net(21);
  const MatrixXd gallery = cube_gallery();
  MatrixXd queries(3, 2);
  queries.col(0) = Vector3d(1, 0, 0);
  queries.col(1) = Vector3d(0, 1, 0);
  SolverConfig solver;
  solver.n_steps = 2;
  const auto records = retrieval_entropy_pipeline(
      p, MaskKind::ImageToText, queries, gallery, {3, 5}, 2000, 8.0, solver);
  REQUIRE(records.size() == 2);
  for (const EntropyRecord& r : records) {
    CHECK(r.entropy > 0.95 * std::log(8.0));
    CHECK(r.fano_r_min > 0.5);
    CHECK(r.rank_of_true >= 1);
    CHECK(r.rank_of_true <= 8);
  }
}

TEST_CASE("the pipeline is one sample call plus a posterior") {
  const NetParams p = fresh_net(22);
  const MatrixXd gallery = cube_gallery();
  MatrixXd queries(3, 1);
  queries.col(0) = Vector3d(0, 0, 1);
  SolverConfig solver;
  solver.n_steps = 3;
  const int m = 16;
  const auto rec = retrieval_entropy_pipeline(p, MaskKind::ImageToText, queries,
                                              gallery, {}, m, 12.0, solver);
  REQUIRE(rec.size() == 1);
  CHECK(rec[0].rank_of_true == -1);

  MatrixXd cond(3, m);
  std::vector<std::uint64_t> tags(m);
  for (int i = 0; i < m; ++i) {
    cond.col(i) = queries.col(0);
    tags[i] = i;
  }
  const SampleBatch s = sample(p, MaskKind::ImageToText, &cond, m, solver, tags);
  const GalleryPosterior post = gallery_posterior(s.txt, gallery, 12.0);
  CHECK(rec[0].entropy == post.entropy);

  CHECK_THROWS_AS(retrieval_entropy_pipeline(p, MaskKind::Joint, queries, gallery,
                                             {}, m, 12.0, solver),
                  ConfigError);
  CHECK_THROWS_AS(retrieval_entropy_pipeline(p, MaskKind::ImageToText, queries,
                                             gallery, {1, 2}, m, 12.0, solver),
                  ConfigError);
  CHECK_THROWS_AS(retrieval_entropy_pipeline(p, MaskKind::ImageToText, queries,
                                             gallery, {}, 0, 12.0, solver),
                  ConfigError);
}
