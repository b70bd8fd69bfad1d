#include "geoflow/runtime.hpp"

#include <cmath>

namespace geoflow {

namespace {

void check_finite(const MatrixXd& m, const char* what, int step) {
  if (!m.allFinite())
    throw NumericalError(std::string("non-finite ") + what + " at solver step " +
                         std::to_string(step));
}

void fill_probe(VectorXd& eps, ProbeKind kind, Rng& rng) {
  for (Eigen::Index i = 0; i < eps.size(); ++i)
    eps[i] = kind == ProbeKind::Rademacher ? rng.rademacher() : rng.normal();
}

void renorm_cols(MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double n = m.col(j).norm();
    if (n < 1e-12) throw NumericalError("state collapsed to zero norm");
    m.col(j) /= n;
  }
}

// Tangent-project each column of f at the matching column of z.
MatrixXd project_cols(const MatrixXd& z, const MatrixXd& f) {
  MatrixXd out = f;
  for (Eigen::Index j = 0; j < f.cols(); ++j)
    out.col(j) -= z.col(j).dot(f.col(j)) * z.col(j);
  return out;
}

}  // namespace

void SolverConfig::validate() const {
  if (n_steps < 1) throw ConfigError("n_steps must be positive");
  if (n_probes < 1) throw ConfigError("n_probes must be positive");
  if (guidance < 0.0) throw ConfigError("guidance scale must be nonnegative");
}

SampleBatch sample(const NetParams& p, MaskKind kind, const MatrixXd* cond,
                   Eigen::Index n, const SolverConfig& cfg,
                   const std::vector<std::uint64_t>& column_tags) {
  cfg.validate();
  if (static_cast<Eigen::Index>(column_tags.size()) != n)
    throw ConfigError("need one column tag per sample");
  const FlowMask mask{kind, false};
  if (mask.conditional() && cond == nullptr)
    throw ConfigError("conditional sampling needs a conditioner block");
  const int d = p.cfg.embed_dim;
  const bool euclid = cfg.geometry == Geometry::Euclidean;
  const double lambda = mask.conditional() ? cfg.guidance : 0.0;

  // Initial states and, for conditional masks, the coupled noise that stands
  // in for the conditioner on the unconditional branch.
  MatrixXd z_img(d, n), z_txt(d, n), uncond_sub(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Rng rng = Rng(cfg.seed).fork(rng_stream::kSampler, column_tags[j]);
    if (mask.transports_image()) z_img.col(j) = sample_uniform_sphere(d, rng);
    if (mask.transports_text()) z_txt.col(j) = sample_uniform_sphere(d, rng);
    if (mask.conditional()) uncond_sub.col(j) = sample_uniform_sphere(d, rng);
  }
  if (kind == MaskKind::ImageToText) z_img = *cond;
  if (kind == MaskKind::TextToImage) z_txt = *cond;

  NetBatch in;
  in.dir = VectorXi::Constant(n, mask.dir());
  Activations acts_c, acts_u;
  const double h = 1.0 / cfg.n_steps;

  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = k * h;
    in.z_img = z_img;
    in.z_txt = z_txt;
    in.t_img = VectorXd::Constant(n, mask.transports_image() ? t : 0.0);
    in.t_txt = VectorXd::Constant(n, mask.transports_text() ? t : 0.0);
    net_forward(p, in, false, nullptr, acts_c);

    MatrixXd f_img = acts_c.stream[0].f, f_txt = acts_c.stream[1].f;
    if (lambda > 0.0) {
      NetBatch uin = in;
      if (kind == MaskKind::ImageToText) uin.z_img = uncond_sub;
      if (kind == MaskKind::TextToImage) uin.z_txt = uncond_sub;
      net_forward(p, uin, false, nullptr, acts_u);
      f_img = (1.0 + lambda) * f_img - lambda * acts_u.stream[0].f;
      f_txt = (1.0 + lambda) * f_txt - lambda * acts_u.stream[1].f;
    }

    if (mask.transports_image()) {
      z_img += h * (euclid ? f_img : project_cols(z_img, f_img));
      if (!euclid) renorm_cols(z_img);
      check_finite(z_img, "image state", k);
    }
    if (mask.transports_text()) {
      z_txt += h * (euclid ? f_txt : project_cols(z_txt, f_txt));
      if (!euclid) renorm_cols(z_txt);
      check_finite(z_txt, "text state", k);
    }
  }
  return {std::move(z_img), std::move(z_txt)};
}

ProductPoint guided_velocity(const NetParams& p, MaskKind kind,
                             const ProductPoint& state, const VectorXd& uncond_sub,
                             double t, double lambda, Geometry geom) {
  const FlowMask mask{kind, false};
  if (!mask.conditional())
    throw ConfigError("guided velocity is defined for conditional masks");
  if (lambda < 0.0) throw ConfigError("guidance scale must be nonnegative");
  const int d = p.cfg.embed_dim;

  NetBatch in;
  in.z_img = state.image;
  in.z_txt = state.text;
  in.t_img = VectorXd::Constant(1, mask.transports_image() ? t : 0.0);
  in.t_txt = VectorXd::Constant(1, mask.transports_text() ? t : 0.0);
  in.dir = VectorXi::Constant(1, mask.dir());
  Activations acts;
  net_forward(p, in, false, nullptr, acts);
  VectorXd f = mask.transports_image() ? acts.stream[0].f.col(0)
                                       : VectorXd(acts.stream[1].f.col(0));

  if (lambda > 0.0) {
    NetBatch uin = in;
    if (kind == MaskKind::ImageToText) uin.z_img = uncond_sub;
    if (kind == MaskKind::TextToImage) uin.z_txt = uncond_sub;
    net_forward(p, uin, false, nullptr, acts);
    const VectorXd fu = mask.transports_image() ? acts.stream[0].f.col(0)
                                                : VectorXd(acts.stream[1].f.col(0));
    f = (1.0 + lambda) * f - lambda * fu;
  }

  ProductPoint v{VectorXd::Zero(d), VectorXd::Zero(d)};
  const VectorXd& zb = mask.transports_image() ? state.image : state.text;
  const VectorXd vb = geom == Geometry::Riemannian ? tangent_project(zb, f) : f;
  (mask.transports_image() ? v.image : v.text) = vb;
  return v;
}

double divergence_estimate(const Field& field, const ProductPoint& z,
                           const FlowMask& mask, int n_probes, ProbeKind kind,
                           Rng& rng, Geometry geom) {
  if (n_probes < 1) throw ConfigError("n_probes must be positive");
  const int d = static_cast<int>(z.image.size());
  const FieldPoint fp = field(z);
  if (fp.value.size() != 2 * d) throw ConfigError("field must be ambient product-sized");

  double acc = 0.0;
  for (int j = 0; j < n_probes; ++j) {
    VectorXd eps = VectorXd::Zero(2 * d);
    VectorXd block(d);
    if (mask.transports_image()) {
      fill_probe(block, kind, rng);
      eps.head(d) = geom == Geometry::Riemannian ? tangent_project(z.image, block)
                                                 : block;
    }
    if (mask.transports_text()) {
      fill_probe(block, kind, rng);
      eps.tail(d) = geom == Geometry::Riemannian ? tangent_project(z.text, block)
                                                 : block;
    }
    acc += fp.vjp(eps).dot(eps);
  }
  double est = acc / n_probes;
  if (geom == Geometry::Riemannian) {
    if (mask.transports_image())
      est -= z.image.dot(fp.value.head(d)) * (d - 1);
    if (mask.transports_text())
      est -= z.text.dot(fp.value.tail(d)) * (d - 1);
  }
  return est;
}

std::vector<DensityEstimate> log_density_batch(const NetParams& p, MaskKind kind,
                                               const MatrixXd& img,
                                               const MatrixXd& txt,
                                               const SolverConfig& cfg,
                                               const std::vector<std::uint64_t>& ids) {
  cfg.validate();
  const auto n = img.cols();
  if (txt.cols() != n || static_cast<Eigen::Index>(ids.size()) != n)
    throw ConfigError("log_density_batch inputs must align");
  const FlowMask mask{kind, false};
  const int d = p.cfg.embed_dim;
  const bool euclid = cfg.geometry == Geometry::Euclidean;
  const double h = 1.0 / cfg.n_steps;
  const Rng root = Rng(cfg.seed).fork(rng_stream::kProbe, mask.dir());

  MatrixXd z_img = img, z_txt = txt;
  VectorXd s = VectorXd::Zero(n);

  NetBatch in;
  in.dir = VectorXi::Constant(n, mask.dir());
  Activations acts;
  MatrixXd df_img(d, n), df_txt(d, n), dz_img(d, n), dz_txt(d, n);
  MatrixXd eps_img(d, n), eps_txt(d, n);

  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = 1.0 - k * h;
    in.z_img = z_img;
    in.z_txt = z_txt;
    in.t_img = VectorXd::Constant(n, mask.transports_image() ? t : 0.0);
    in.t_txt = VectorXd::Constant(n, mask.transports_text() ? t : 0.0);
    net_forward(p, in, false, nullptr, acts);
    const MatrixXd& f_img = acts.stream[0].f;
    const MatrixXd& f_txt = acts.stream[1].f;

    VectorXd div = VectorXd::Zero(n);
    VectorXd block(d);
    for (int j = 0; j < cfg.n_probes; ++j) {
      df_img.setZero();
      df_txt.setZero();
      for (Eigen::Index c = 0; c < n; ++c) {
        Rng rng = root.fork(ids[c], k).fork(j);
        if (mask.transports_image()) {
          fill_probe(block, cfg.probe, rng);
          df_img.col(c) = euclid ? block : tangent_project(z_img.col(c), block);
        }
        if (mask.transports_text()) {
          fill_probe(block, cfg.probe, rng);
          df_txt.col(c) = euclid ? block : tangent_project(z_txt.col(c), block);
        }
      }
      eps_img = df_img;
      eps_txt = df_txt;
      BackwardRequest req;
      req.df_img = &df_img;
      req.df_txt = &df_txt;
      req.dz_img = &dz_img;
      req.dz_txt = &dz_txt;
      net_backward(p, in, acts, req);
      for (Eigen::Index c = 0; c < n; ++c) {
        double e = 0.0;
        if (mask.transports_image()) e += dz_img.col(c).dot(eps_img.col(c));
        if (mask.transports_text()) e += dz_txt.col(c).dot(eps_txt.col(c));
        div[c] += e;
      }
    }
    div /= cfg.n_probes;
    if (!euclid) {
      for (Eigen::Index c = 0; c < n; ++c) {
        if (mask.transports_image())
          div[c] -= z_img.col(c).dot(f_img.col(c)) * (d - 1);
        if (mask.transports_text())
          div[c] -= z_txt.col(c).dot(f_txt.col(c)) * (d - 1);
      }
    }

    if (mask.transports_image()) {
      z_img -= h * (euclid ? f_img : project_cols(z_img, f_img));
      if (!euclid) renorm_cols(z_img);
      check_finite(z_img, "image state", k);
    }
    if (mask.transports_text()) {
      z_txt -= h * (euclid ? f_txt : project_cols(z_txt, f_txt));
      if (!euclid) renorm_cols(z_txt);
      check_finite(z_txt, "text state", k);
    }
    s -= h * div;
    if (!s.allFinite())
      throw NumericalError("non-finite divergence integral at solver step " +
                           std::to_string(k));
  }

  const int blocks = (mask.transports_image() ? 1 : 0) + (mask.transports_text() ? 1 : 0);
  const double base = -blocks * log_sphere_area(d);
  std::vector<DensityEstimate> out(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    out[c] = {base + s[c], s[c], base, cfg.n_steps, cfg.n_probes, cfg.seed};
  }
  return out;
}

DensityEstimate log_density(const NetParams& p, MaskKind kind, const ProductPoint& z,
                            const SolverConfig& cfg, std::uint64_t id) {
  return log_density_batch(p, kind, z.image, z.text, cfg, {id})[0];
}

std::vector<DecompositionReport> decompose_batch(const NetParams& p,
                                                 const MatrixXd& img,
                                                 const MatrixXd& txt,
                                                 const SolverConfig& cfg,
                                                 const std::vector<std::uint64_t>& ids) {
  const auto joint = log_density_batch(p, MaskKind::Joint, img, txt, cfg, ids);
  const auto c_t = log_density_batch(p, MaskKind::ImageToText, img, txt, cfg, ids);
  const auto c_i = log_density_batch(p, MaskKind::TextToImage, img, txt, cfg, ids);
  std::vector<DecompositionReport> out(joint.size());
  for (std::size_t i = 0; i < joint.size(); ++i) {
    DecompositionReport& r = out[i];
    const double jl = joint[i].log_density;
    r.joint_nll = -jl;
    r.cond_t_given_i = c_t[i].log_density;
    r.cond_i_given_t = c_i[i].log_density;
    r.marg_i = jl - r.cond_t_given_i;
    r.marg_t = jl - r.cond_i_given_t;
    r.pmi = jl - r.marg_i - r.marg_t;
    r.epistemic_sum = -r.marg_i - r.marg_t;
  }
  return out;
}

DecompositionReport decompose(const NetParams& p, const ProductPoint& z,
                              const SolverConfig& cfg, std::uint64_t id) {
  return decompose_batch(p, z.image, z.text, cfg, {id})[0];
}

}  // namespace geoflow
