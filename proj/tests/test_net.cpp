#include <doctest.h>

#include <cmath>
#include <vector>

#include "geoflow/net.hpp"
#include "geoflow/sphere.hpp"

using namespace geoflow;

namespace {

NetConfig toy_config() {
  NetConfig c;
  c.embed_dim = 4;
  c.hidden_dim = 8;
  c.depth = 2;
  c.gate_heads = 2;
  c.dropout_rate = 0.0;
  c.rff_features = 8;
  c.rff_scale = 10.0;
  return c;
}

// Small random offsets on every trainable tensor so gradients flow through
// paths that start at zero (decoders, modulations, value maps).
void perturb(NetParams& p, Rng& rng, double scale = 0.1) {
  for (TensorView v : tensor_views(p)) {
    if (!v.trainable) continue;
    for (Eigen::Index i = 0; i < v.size; ++i) v.data[i] += scale * rng.normal();
  }
}

// Mixed-mask batch: two joint, two i2t, two t2i columns with tangent targets
// on the transported blocks.
LossBatch mixed_batch(int d, Rng& rng) {
  const int B = 6;
  LossBatch b;
  b.in.z_img.resize(d, B);
  b.in.z_txt.resize(d, B);
  b.in.t_img.resize(B);
  b.in.t_txt.resize(B);
  b.in.dir.resize(B);
  b.target_img = MatrixXd::Zero(d, B);
  b.target_txt = MatrixXd::Zero(d, B);
  b.move_img.assign(B, 0);
  b.move_txt.assign(B, 0);
  for (int j = 0; j < B; ++j) {
    b.in.z_img.col(j) = sample_uniform_sphere(d, rng);
    b.in.z_txt.col(j) = sample_uniform_sphere(d, rng);
    const MaskKind kind = static_cast<MaskKind>(j / 2);
    const double t = rng.uniform();
    b.in.dir[j] = static_cast<int>(kind);
    b.in.t_img[j] = kind == MaskKind::ImageToText ? 0.0 : t;
    b.in.t_txt[j] = kind == MaskKind::TextToImage ? 0.0 : t;
    b.move_img[j] = kind != MaskKind::ImageToText;
    b.move_txt[j] = kind != MaskKind::TextToImage;
    VectorXd gi(d), gt(d);
    for (int i = 0; i < d; ++i) {
      gi[i] = rng.normal();
      gt[i] = rng.normal();
    }
    if (b.move_img[j]) b.target_img.col(j) = tangent_project(b.in.z_img.col(j), gi);
    if (b.move_txt[j]) b.target_txt.col(j) = tangent_project(b.in.z_txt.col(j), gt);
  }
  return b;
}

double eval_loss(const NetParams& p, const LossBatch& b) {
  Activations acts;
  return masked_cfm_loss(p, b, Geometry::Riemannian, false, nullptr, nullptr, acts);
}

}  // namespace

TEST_CASE("fresh parameters give an exactly zero field") {
  Rng rng(41);
  NetParams p = init_params(toy_config(), rng);
  const LossBatch b = mixed_batch(4, rng);
  Activations acts;
  net_forward(p, b.in, false, nullptr, acts);
  CHECK(acts.stream[0].f.cwiseAbs().maxCoeff() == 0.0);
  CHECK(acts.stream[1].f.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adaln modulation is the identity at initialization") {
  Rng rng(42);
  NetParams p = init_params(toy_config(), rng);
  const LossBatch b = mixed_batch(4, rng);
  Activations acts;
  net_forward(p, b.in, false, nullptr, acts);
  for (int s = 0; s < 2; ++s)
    for (const auto& blk : acts.stream[s].blocks) {
      CHECK(blk.mod1.cwiseAbs().maxCoeff() == 0.0);
      CHECK((blk.x1 - blk.n1hat).cwiseAbs().maxCoeff() == 0.0);
      CHECK((blk.x2 - blk.n2hat).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("evaluation mode is deterministic, dropout mode is not a no-op") {
  NetConfig c = toy_config();
  c.dropout_rate = 0.3;
  Rng rng(43);
  NetParams p = init_params(c, rng);
  perturb(p, rng);
  const LossBatch b = mixed_batch(4, rng);
  Activations a1, a2;
  net_forward(p, b.in, false, nullptr, a1);
  net_forward(p, b.in, false, nullptr, a2);
  CHECK((a1.stream[0].f - a2.stream[0].f).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a1.stream[1].f - a2.stream[1].f).cwiseAbs().maxCoeff() == 0.0);

  Rng d1(7), d2(8);
  Activations t1, t2;
  net_forward(p, b.in, true, &d1, t1);
  net_forward(p, b.in, true, &d2, t2);
  const double gap = (t1.stream[0].f - t2.stream[0].f).cwiseAbs().maxCoeff() +
                     (t1.stream[1].f - t2.stream[1].f).cwiseAbs().maxCoeff();
  CHECK(gap > 0.0);
  CHECK_THROWS_AS(net_forward(p, b.in, true, nullptr, t1), ConfigError);
}

TEST_CASE("direction id reaches the output") {
  Rng rng(44);
  NetParams p = init_params(toy_config(), rng);
  perturb(p, rng);
  LossBatch b = mixed_batch(4, rng);
  b.in.dir.setConstant(0);
  Activations a0, a1;
  net_forward(p, b.in, false, nullptr, a0);
  b.in.dir.setConstant(1);
  net_forward(p, b.in, false, nullptr, a1);
  CHECK((a0.stream[0].f - a1.stream[0].f).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("every parameter gradient matches central differences") {
  Rng rng(45);
  NetParams p = init_params(toy_config(), rng);
  perturb(p, rng);
  const LossBatch b = mixed_batch(4, rng);

  NetParams grads = zeros_like(p);
  Activations acts;
  masked_cfm_loss(p, b, Geometry::Riemannian, false, nullptr, &grads, acts);

  auto views = tensor_views(p);
  auto gviews = tensor_views(grads);
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (!views[v].trainable) {
      CHECK(Eigen::Map<VectorXd>(gviews[v].data, gviews[v].size).cwiseAbs().maxCoeff() ==
            0.0);
      continue;
    }
    double worst = 0.0;
    for (Eigen::Index i = 0; i < views[v].size; ++i) {
      double& w = views[v].data[i];
      const double w0 = w;
      const double h = 1e-5 * std::max(1.0, std::abs(w0));
      w = w0 + h;
      const double lp = eval_loss(p, b);
      w = w0 - h;
      const double lm = eval_loss(p, b);
      w = w0;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = gviews[v].data[i];
      const double rel =
          std::abs(fd - an) / std::max({1e-5, std::abs(fd), std::abs(an)});
      worst = std::max(worst, rel);
    }
    INFO("tensor ", views[v].name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("input cotangents match central differences") {
  Rng rng(46);
  NetParams p = init_params(toy_config(), rng);
  perturb(p, rng);
  LossBatch b = mixed_batch(4, rng);

  Activations acts;
  net_forward(p, b.in, false, nullptr, acts);
  MatrixXd df_img(4, b.in.size()), df_txt(4, b.in.size());
  for (Eigen::Index j = 0; j < df_img.size(); ++j) {
    df_img.data()[j] = rng.normal();
    df_txt.data()[j] = rng.normal();
  }
  MatrixXd dz_img, dz_txt;
  BackwardRequest req;
  req.df_img = &df_img;
  req.df_txt = &df_txt;
  req.dz_img = &dz_img;
  req.dz_txt = &dz_txt;
  net_backward(p, b.in, acts, req);

  // Scalar objective <df, f(z)>; its z-gradient is the returned cotangent.
  auto objective = [&](const NetBatch& in) {
    Activations a;
    net_forward(p, in, false, nullptr, a);
    return (df_img.array() * a.stream[0].f.array()).sum() +
           (df_txt.array() * a.stream[1].f.array()).sum();
  };
  const double h = 1e-6;
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 4; ++i) {
      NetBatch in = b.in;
      in.z_img(i, j) += h;
      const double lp = objective(in);
      in.z_img(i, j) -= 2 * h;
      const double lm = objective(in);
      const double fd = (lp - lm) / (2 * h);
      CHECK(std::abs(fd - dz_img(i, j)) <
            1e-4 * std::max(1.0, std::abs(dz_img(i, j))));
      NetBatch in2 = b.in;
      in2.z_txt(i, j) += h;
      const double tp = objective(in2);
      in2.z_txt(i, j) -= 2 * h;
      const double tm = objective(in2);
      CHECK(std::abs((tp - tm) / (2 * h) - dz_txt(i, j)) <
            1e-4 * std::max(1.0, std::abs(dz_txt(i, j))));
    }
  }
}

TEST_CASE("input cotangents vanish for zero seeds") {
  Rng rng(47);
  NetParams fresh = init_params(toy_config(), rng);
  const LossBatch b = mixed_batch(4, rng);
  Activations acts;
  net_forward(fresh, b.in, false, nullptr, acts);
  const MatrixXd zero = MatrixXd::Zero(4, b.in.size());
  MatrixXd dz_img, dz_txt;
  BackwardRequest req;
  req.df_img = &zero;
  req.df_txt = &zero;
  req.dz_img = &dz_img;
  req.dz_txt = &dz_txt;
  net_backward(fresh, b.in, acts, req);
  // Zero cotangent: nothing to pull back.
  CHECK(dz_img.cwiseAbs().maxCoeff() == 0.0);
  CHECK(dz_txt.cwiseAbs().maxCoeff() == 0.0);

  // Fresh params: output is constant zero, so any cotangent pulls back to
  // zero through the dead decoder.
  MatrixXd ones = MatrixXd::Ones(4, b.in.size());
  req.df_img = &ones;
  req.df_txt = &ones;
  net_backward(fresh, b.in, acts, req);
  CHECK(dz_img.cwiseAbs().maxCoeff() == 0.0);
  CHECK(dz_txt.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross-gate heads are block isolated") {
  Rng rng(48);
  NetParams p = init_params(toy_config(), rng);
  perturb(p, rng);
  const LossBatch b = mixed_batch(4, rng);
  Activations base;
  net_forward(p, b.in, false, nullptr, base);

  NetParams cut = p;
  cut.stream[0].blocks[0].cg_val[1].setZero();
  Activations after;
  net_forward(cut, b.in, false, nullptr, after);

  const int hd = p.cfg.head_dim();
  const MatrixXd& c0 = base.stream[0].blocks[0].cgo;
  const MatrixXd& c1 = after.stream[0].blocks[0].cgo;
  // Head 1 rows lose the sending stream entirely; head 0 rows are untouched.
  CHECK(c1.middleRows(hd, hd).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c0.middleRows(hd, hd).cwiseAbs().maxCoeff() > 0.0);
  CHECK((c1.topRows(hd) - c0.topRows(hd)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss vanishes when the field already equals the target") {
  Rng rng(49);
  NetParams p = init_params(toy_config(), rng);
  LossBatch b = mixed_batch(4, rng);
  b.target_img.setZero();
  b.target_txt.setZero();
  NetParams grads = zeros_like(p);
  Activations acts;
  const double loss =
      masked_cfm_loss(p, b, Geometry::Riemannian, false, nullptr, &grads, acts);
  CHECK(loss == 0.0);
  CHECK(grads.stream[0].dec_b.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.stream[1].dec_b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("initial loss equals the mean masked squared target norm") {
  Rng rng(50);
  NetParams p = init_params(toy_config(), rng);
  const LossBatch b = mixed_batch(4, rng);
  double ref = 0.0;
  for (Eigen::Index j = 0; j < b.in.size(); ++j) {
    if (b.move_img[j]) ref += b.target_img.col(j).squaredNorm();
    if (b.move_txt[j]) ref += b.target_txt.col(j).squaredNorm();
  }
  ref /= static_cast<double>(b.in.size());
  CHECK(eval_loss(p, b) == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("pinned blocks never contribute to the loss") {
  Rng rng(51);
  NetParams p = init_params(toy_config(), rng);
  perturb(p, rng);
  LossBatch b = mixed_batch(4, rng);
  // Keep only i2t columns so the image block is pinned everywhere.
  for (Eigen::Index j = 0; j < b.in.size(); ++j) {
    b.in.dir[j] = 1;
    b.in.t_img[j] = 0.0;
    b.move_img[j] = 0;
    b.move_txt[j] = 1;
  }
  b.target_img.setZero();
  const double before = eval_loss(p, b);
  NetParams bumped = p;
  bumped.stream[0].dec_b.array() += 3.0;
  bumped.stream[0].dec_w.array() += 1.0;
  CHECK(eval_loss(bumped, b) == before);
}

TEST_CASE("non-finite states name the offending sample") {
  Rng rng(52);
  NetParams p = init_params(toy_config(), rng);
  perturb(p, rng);
  LossBatch b = mixed_batch(4, rng);
  b.in.z_img(0, 3) = std::numeric_limits<double>::quiet_NaN();
  Activations acts;
  try {
    masked_cfm_loss(p, b, Geometry::Riemannian, false, nullptr, nullptr, acts);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("sample 3") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  NetConfig c = toy_config();
  CHECK_NOTHROW(c.validate());
  c.gate_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.embed_dim = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("layer scale starts at its documented value and rff is frozen") {
  Rng r1(53), r2(53);
  NetParams a = init_params(toy_config(), r1);
  CHECK(a.stream[0].blocks[0].ls1.cwiseAbs().maxCoeff() ==
        doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(a.stream[1].blocks[1].ls2.cwiseAbs().maxCoeff() ==
        doctest::Approx(1e-4).epsilon(1e-15));
  // Same seed reproduces the same frozen frequencies.
  NetParams b = init_params(toy_config(), r2);
  CHECK((a.rff_freq - b.rff_freq).cwiseAbs().maxCoeff() == 0.0);
}
