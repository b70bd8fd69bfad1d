#include "geoflow/net.hpp"

#include <cmath>

namespace geoflow {

namespace {

constexpr double kLnEps = 1e-6;
constexpr double kTwoPi = 6.283185307179586477;

void ln_forward(const MatrixXd& x, MatrixXd& xhat, RowVectorXd& istd) {
  const RowVectorXd mean = x.colwise().mean();
  xhat = x.rowwise() - mean;
  const RowVectorXd var = xhat.array().square().colwise().mean();
  istd = (var.array() + kLnEps).rsqrt();
  xhat = xhat.array().rowwise() * istd.array();
}

MatrixXd ln_backward(const MatrixXd& dxhat, const MatrixXd& xhat,
                     const RowVectorXd& istd) {
  const RowVectorXd m1 = dxhat.colwise().mean();
  const RowVectorXd m2 = (dxhat.array() * xhat.array()).colwise().mean();
  MatrixXd dx =
      (dxhat.rowwise() - m1).array() - xhat.array().rowwise() * m2.array();
  return dx.array().rowwise() * istd.array();
}

MatrixXd sigmoid(const MatrixXd& x) {
  return ((-x.array()).exp() + 1.0).inverse();
}

// d silu(x) given x and sigmoid(x).
MatrixXd silu_grad(const MatrixXd& x, const MatrixXd& sig) {
  return sig.array() * (1.0 + x.array() * (1.0 - sig.array()));
}

void heads_apply(const std::vector<MatrixXd>& w, const MatrixXd& x, MatrixXd& y) {
  const auto hs = w[0].rows();
  y.resize(x.rows(), x.cols());
  for (std::size_t h = 0; h < w.size(); ++h)
    y.middleRows(h * hs, hs).noalias() = w[h] * x.middleRows(h * hs, hs);
}

void heads_apply_t_add(const std::vector<MatrixXd>& w, const MatrixXd& dy,
                       MatrixXd& dx) {
  const auto hs = w[0].rows();
  for (std::size_t h = 0; h < w.size(); ++h)
    dx.middleRows(h * hs, hs).noalias() += w[h].transpose() * dy.middleRows(h * hs, hs);
}

void heads_grad(std::vector<MatrixXd>& gw, const MatrixXd& dy, const MatrixXd& x) {
  const auto hs = gw[0].rows();
  for (std::size_t h = 0; h < gw.size(); ++h)
    gw[h].noalias() += dy.middleRows(h * hs, hs) * x.middleRows(h * hs, hs).transpose();
}

void fill_uniform(double* data, Eigen::Index n, double lim, Rng& rng) {
  for (Eigen::Index i = 0; i < n; ++i) data[i] = rng.uniform(-lim, lim);
}

VectorXd rowsum(const MatrixXd& m) { return m.rowwise().sum(); }

}  // namespace

void NetConfig::validate() const {
  if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
  if (hidden_dim < 1 || depth < 1 || gate_heads < 1 || rff_features < 1)
    throw ConfigError("net dims must be positive");
  if (hidden_dim % gate_heads != 0)
    throw ConfigError("hidden_dim must be divisible by gate_heads");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ConfigError("dropout_rate must be in [0, 1)");
  if (rff_scale <= 0.0) throw ConfigError("rff_scale must be positive");
}

NetParams init_params(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.embed_dim, H = cfg.hidden_dim, F = cfg.rff_features;
  const int hs = cfg.head_dim();
  NetParams p;
  p.cfg = cfg;

  p.rff_freq.resize(F);
  for (int i = 0; i < F; ++i) p.rff_freq[i] = cfg.rff_scale * rng.normal();
  p.dir_embed.resize(2 * F, 3);
  for (Eigen::Index i = 0; i < p.dir_embed.size(); ++i)
    p.dir_embed.data()[i] = 0.02 * rng.normal();

  for (auto& sp : p.stream) {
    const double lim_in = 1.0 / std::sqrt(static_cast<double>(d));
    sp.in_w.resize(H, d);
    fill_uniform(sp.in_w.data(), sp.in_w.size(), lim_in, rng);
    sp.in_b.resize(H);
    fill_uniform(sp.in_b.data(), H, lim_in, rng);
    sp.in_ln_g = VectorXd::Ones(H);
    sp.in_ln_b = VectorXd::Zero(H);

    const double lim_c1 = 1.0 / std::sqrt(static_cast<double>(2 * F));
    sp.cond1_w.resize(H, 2 * F);
    fill_uniform(sp.cond1_w.data(), sp.cond1_w.size(), lim_c1, rng);
    sp.cond1_b.resize(H);
    fill_uniform(sp.cond1_b.data(), H, lim_c1, rng);
    const double lim_h = 1.0 / std::sqrt(static_cast<double>(H));
    sp.cond2_w.resize(H, H);
    fill_uniform(sp.cond2_w.data(), sp.cond2_w.size(), lim_h, rng);
    sp.cond2_b.resize(H);
    fill_uniform(sp.cond2_b.data(), H, lim_h, rng);

    sp.blocks.resize(cfg.depth);
    for (auto& bp : sp.blocks) {
      bp.mod1_w = MatrixXd::Zero(2 * H, H);
      bp.mod1_b = VectorXd::Zero(2 * H);
      bp.mod2_w = MatrixXd::Zero(2 * H, H);
      bp.mod2_b = VectorXd::Zero(2 * H);
      const double lim_hs = 1.0 / std::sqrt(static_cast<double>(hs));
      bp.cg_gate.resize(cfg.gate_heads);
      bp.cg_val.resize(cfg.gate_heads);
      for (int h = 0; h < cfg.gate_heads; ++h) {
        bp.cg_gate[h].resize(hs, hs);
        fill_uniform(bp.cg_gate[h].data(), bp.cg_gate[h].size(), lim_hs, rng);
        bp.cg_val[h] = MatrixXd::Zero(hs, hs);
      }
      bp.ff_gate.resize(H, H);
      fill_uniform(bp.ff_gate.data(), bp.ff_gate.size(), lim_h, rng);
      bp.ff_val.resize(H, H);
      fill_uniform(bp.ff_val.data(), bp.ff_val.size(), lim_h, rng);
      bp.ls1 = VectorXd::Constant(H, 1e-4);
      bp.ls2 = VectorXd::Constant(H, 1e-4);
    }

    sp.dec_ln_g = VectorXd::Ones(H);
    sp.dec_ln_b = VectorXd::Zero(H);
    sp.dec_w = MatrixXd::Zero(d, H);
    sp.dec_b = VectorXd::Zero(d);
  }
  return p;
}

NetParams zeros_like(const NetParams& p) {
  NetParams z = p;
  for (TensorView v : tensor_views(z))
    for (Eigen::Index i = 0; i < v.size; ++i) v.data[i] = 0.0;
  return z;
}

std::vector<TensorView> tensor_views(NetParams& p) {
  std::vector<TensorView> out;
  auto add = [&out](const std::string& name, auto& m, bool trainable) {
    out.push_back({name, m.data(), m.size(), trainable});
  };
  add("rff_freq", p.rff_freq, false);
  add("dir_embed", p.dir_embed, true);
  for (int s = 0; s < 2; ++s) {
    const std::string pre = s == 0 ? "img/" : "txt/";
    auto& sp = p.stream[s];
    add(pre + "in_w", sp.in_w, true);
    add(pre + "in_b", sp.in_b, true);
    add(pre + "in_ln_g", sp.in_ln_g, true);
    add(pre + "in_ln_b", sp.in_ln_b, true);
    add(pre + "cond1_w", sp.cond1_w, true);
    add(pre + "cond1_b", sp.cond1_b, true);
    add(pre + "cond2_w", sp.cond2_w, true);
    add(pre + "cond2_b", sp.cond2_b, true);
    for (std::size_t l = 0; l < sp.blocks.size(); ++l) {
      const std::string bp = pre + "block" + std::to_string(l) + "/";
      auto& b = sp.blocks[l];
      add(bp + "mod1_w", b.mod1_w, true);
      add(bp + "mod1_b", b.mod1_b, true);
      for (std::size_t h = 0; h < b.cg_gate.size(); ++h)
        add(bp + "cg_gate" + std::to_string(h), b.cg_gate[h], true);
      for (std::size_t h = 0; h < b.cg_val.size(); ++h)
        add(bp + "cg_val" + std::to_string(h), b.cg_val[h], true);
      add(bp + "ls1", b.ls1, true);
      add(bp + "mod2_w", b.mod2_w, true);
      add(bp + "mod2_b", b.mod2_b, true);
      add(bp + "ff_gate", b.ff_gate, true);
      add(bp + "ff_val", b.ff_val, true);
      add(bp + "ls2", b.ls2, true);
    }
    add(pre + "dec_ln_g", sp.dec_ln_g, true);
    add(pre + "dec_ln_b", sp.dec_ln_b, true);
    add(pre + "dec_w", sp.dec_w, true);
    add(pre + "dec_b", sp.dec_b, true);
  }
  return out;
}

void net_forward(const NetParams& p, const NetBatch& in, bool train_mode,
                 Rng* dropout_rng, Activations& acts) {
  const auto B = in.size();
  const int F = p.cfg.rff_features;
  const int L = p.cfg.depth;
  const double drop = p.cfg.dropout_rate;
  if (train_mode && drop > 0.0 && dropout_rng == nullptr)
    throw ConfigError("dropout requires an rng in train mode");

  for (int s = 0; s < 2; ++s) {
    auto& sa = acts.stream[s];
    const auto& sp = p.stream[s];
    const MatrixXd& z = s == 0 ? in.z_img : in.z_txt;
    const VectorXd& tt = s == 0 ? in.t_img : in.t_txt;

    sa.xin = (sp.in_w * z).colwise() + sp.in_b;
    ln_forward(sa.xin, sa.xhat_in, sa.istd_in);
    sa.h0 = (sa.xhat_in.array().colwise() * sp.in_ln_g.array()).colwise() +
            sp.in_ln_b.array();

    MatrixXd ang = kTwoPi * (p.rff_freq * tt.transpose());
    sa.rff.resize(2 * F, B);
    sa.rff.topRows(F) = ang.array().sin();
    sa.rff.bottomRows(F) = ang.array().cos();
    sa.e = sa.rff;
    for (Eigen::Index b = 0; b < B; ++b) sa.e.col(b) += p.dir_embed.col(in.dir[b]);

    sa.c1 = (sp.cond1_w * sa.e).colwise() + sp.cond1_b;
    sa.c1_sig = sigmoid(sa.c1);
    sa.s1 = sa.c1.array() * sa.c1_sig.array();
    sa.c = (sp.cond2_w * sa.s1).colwise() + sp.cond2_b;
    sa.c_sig = sigmoid(sa.c);
    sa.sc = sa.c.array() * sa.c_sig.array();
    sa.blocks.resize(L);
  }

  MatrixXd h[2] = {acts.stream[0].h0, acts.stream[1].h0};
  for (int l = 0; l < L; ++l) {
    for (int s = 0; s < 2; ++s) {
      auto& sa = acts.stream[s];
      auto& ba = sa.blocks[l];
      const auto& bp = p.stream[s].blocks[l];
      ln_forward(h[s], ba.n1hat, ba.istd1);
      ba.mod1 = (bp.mod1_w * sa.sc).colwise() + bp.mod1_b;
      const int H = p.cfg.hidden_dim;
      ba.x1 = ba.n1hat.array() * (1.0 + ba.mod1.bottomRows(H).array()) +
              ba.mod1.topRows(H).array();
    }
    for (int s = 0; s < 2; ++s) {
      auto& ba = acts.stream[s].blocks[l];
      const auto& bp = p.stream[s].blocks[l];
      MatrixXd gpre;
      heads_apply(bp.cg_gate, ba.x1, gpre);
      ba.gsig = sigmoid(gpre);
      heads_apply(bp.cg_val, acts.stream[1 - s].blocks[l].x1, ba.u);
      ba.cgo = ba.gsig.array() * ba.u.array();
    }
    for (int s = 0; s < 2; ++s) {
      const auto& bp = p.stream[s].blocks[l];
      h[s] += (acts.stream[s].blocks[l].cgo.array().colwise() * bp.ls1.array()).matrix();
    }
    for (int s = 0; s < 2; ++s) {
      auto& sa = acts.stream[s];
      auto& ba = sa.blocks[l];
      const auto& bp = p.stream[s].blocks[l];
      const int H = p.cfg.hidden_dim;
      ln_forward(h[s], ba.n2hat, ba.istd2);
      ba.mod2 = (bp.mod2_w * sa.sc).colwise() + bp.mod2_b;
      ba.x2 = ba.n2hat.array() * (1.0 + ba.mod2.bottomRows(H).array()) +
              ba.mod2.topRows(H).array();
      ba.ffa.noalias() = bp.ff_gate * ba.x2;
      ba.ffsig = sigmoid(ba.ffa);
      ba.ffb.noalias() = bp.ff_val * ba.x2;
      ba.ffprod = ba.ffa.array() * ba.ffsig.array() * ba.ffb.array();
      if (train_mode && drop > 0.0) {
        const double keep = 1.0 - drop;
        ba.dropscale.resize(H, B);
        for (Eigen::Index j = 0; j < B; ++j)
          for (int i = 0; i < H; ++i)
            ba.dropscale(i, j) = dropout_rng->uniform() < drop ? 0.0 : 1.0 / keep;
      } else {
        ba.dropscale = MatrixXd::Ones(H, B);
      }
      h[s] += ((ba.ffprod.array() * ba.dropscale.array()).colwise() * bp.ls2.array())
                  .matrix();
    }
  }

  for (int s = 0; s < 2; ++s) {
    auto& sa = acts.stream[s];
    const auto& sp = p.stream[s];
    sa.h_final = h[s];
    ln_forward(sa.h_final, sa.dhat, sa.istd_dec);
    sa.aff = (sa.dhat.array().colwise() * sp.dec_ln_g.array()).colwise() +
             sp.dec_ln_b.array();
    sa.f = (sp.dec_w * sa.aff).colwise() + sp.dec_b;
  }
}

void net_backward(const NetParams& p, const NetBatch& in, const Activations& acts,
                  const BackwardRequest& req) {
  if (req.df_img == nullptr || req.df_txt == nullptr)
    throw ConfigError("net_backward needs both output cotangents");
  const auto B = in.size();
  const int H = p.cfg.hidden_dim;
  const int L = p.cfg.depth;
  NetParams* g = req.grads;

  MatrixXd dh[2], dsc[2];
  for (int s = 0; s < 2; ++s) {
    const auto& sa = acts.stream[s];
    const auto& sp = p.stream[s];
    const MatrixXd& df = s == 0 ? *req.df_img : *req.df_txt;
    if (g) {
      g->stream[s].dec_w.noalias() += df * sa.aff.transpose();
      g->stream[s].dec_b += rowsum(df);
    }
    MatrixXd daff = sp.dec_w.transpose() * df;
    if (g) {
      g->stream[s].dec_ln_g += rowsum((daff.array() * sa.dhat.array()).matrix());
      g->stream[s].dec_ln_b += rowsum(daff);
    }
    MatrixXd ddhat = daff.array().colwise() * sp.dec_ln_g.array();
    dh[s] = ln_backward(ddhat, sa.dhat, sa.istd_dec);
    dsc[s] = MatrixXd::Zero(H, B);
  }

  for (int l = L - 1; l >= 0; --l) {
    // Gated feed-forward half, streams independent.
    for (int s = 0; s < 2; ++s) {
      const auto& sa = acts.stream[s];
      const auto& ba = sa.blocks[l];
      const auto& bp = p.stream[s].blocks[l];
      if (g) {
        g->stream[s].blocks[l].ls2 += rowsum(
            (dh[s].array() * ba.ffprod.array() * ba.dropscale.array()).matrix());
      }
      MatrixXd dffd = dh[s].array().colwise() * bp.ls2.array();
      MatrixXd dprod = dffd.array() * ba.dropscale.array();
      MatrixXd ffs = ba.ffa.array() * ba.ffsig.array();
      MatrixXd dffs = dprod.array() * ba.ffb.array();
      MatrixXd dffb = dprod.array() * ffs.array();
      MatrixXd dffa = dffs.array() * silu_grad(ba.ffa, ba.ffsig).array();
      if (g) {
        g->stream[s].blocks[l].ff_gate.noalias() += dffa * ba.x2.transpose();
        g->stream[s].blocks[l].ff_val.noalias() += dffb * ba.x2.transpose();
      }
      MatrixXd dx2 = bp.ff_gate.transpose() * dffa;
      dx2.noalias() += bp.ff_val.transpose() * dffb;
      MatrixXd dn2hat = dx2.array() * (1.0 + ba.mod2.bottomRows(H).array());
      MatrixXd dmod2(2 * H, B);
      dmod2.topRows(H) = dx2;
      dmod2.bottomRows(H) = dx2.array() * ba.n2hat.array();
      if (g) {
        g->stream[s].blocks[l].mod2_w.noalias() += dmod2 * sa.sc.transpose();
        g->stream[s].blocks[l].mod2_b += rowsum(dmod2);
      }
      dsc[s].noalias() += bp.mod2_w.transpose() * dmod2;
      dh[s] += ln_backward(dn2hat, ba.n2hat, ba.istd2);
    }
    // Cross-gate half: both streams' x1 cotangents before LN backward.
    MatrixXd du[2], dgpre[2], dx1[2];
    for (int s = 0; s < 2; ++s) {
      const auto& ba = acts.stream[s].blocks[l];
      const auto& bp = p.stream[s].blocks[l];
      if (g)
        g->stream[s].blocks[l].ls1 +=
            rowsum((dh[s].array() * ba.cgo.array()).matrix());
      MatrixXd dcgo = dh[s].array().colwise() * bp.ls1.array();
      du[s] = dcgo.array() * ba.gsig.array();
      dgpre[s] = dcgo.array() * ba.u.array() * ba.gsig.array() *
                 (1.0 - ba.gsig.array());
      dx1[s] = MatrixXd::Zero(H, B);
    }
    for (int s = 0; s < 2; ++s) {
      const auto& bp = p.stream[s].blocks[l];
      heads_apply_t_add(bp.cg_gate, dgpre[s], dx1[s]);
      heads_apply_t_add(bp.cg_val, du[s], dx1[1 - s]);
      if (g) {
        heads_grad(g->stream[s].blocks[l].cg_gate, dgpre[s],
                   acts.stream[s].blocks[l].x1);
        heads_grad(g->stream[s].blocks[l].cg_val, du[s],
                   acts.stream[1 - s].blocks[l].x1);
      }
    }
    for (int s = 0; s < 2; ++s) {
      const auto& sa = acts.stream[s];
      const auto& ba = sa.blocks[l];
      const auto& bp = p.stream[s].blocks[l];
      MatrixXd dn1hat = dx1[s].array() * (1.0 + ba.mod1.bottomRows(H).array());
      MatrixXd dmod1(2 * H, B);
      dmod1.topRows(H) = dx1[s];
      dmod1.bottomRows(H) = dx1[s].array() * ba.n1hat.array();
      if (g) {
        g->stream[s].blocks[l].mod1_w.noalias() += dmod1 * sa.sc.transpose();
        g->stream[s].blocks[l].mod1_b += rowsum(dmod1);
      }
      dsc[s].noalias() += bp.mod1_w.transpose() * dmod1;
      dh[s] += ln_backward(dn1hat, ba.n1hat, ba.istd1);
    }
  }

  for (int s = 0; s < 2; ++s) {
    const auto& sa = acts.stream[s];
    const auto& sp = p.stream[s];
    MatrixXd dc = dsc[s].array() * silu_grad(sa.c, sa.c_sig).array();
    if (g) {
      g->stream[s].cond2_w.noalias() += dc * sa.s1.transpose();
      g->stream[s].cond2_b += rowsum(dc);
    }
    MatrixXd ds1 = sp.cond2_w.transpose() * dc;
    MatrixXd dc1 = ds1.array() * silu_grad(sa.c1, sa.c1_sig).array();
    if (g) {
      g->stream[s].cond1_w.noalias() += dc1 * sa.e.transpose();
      g->stream[s].cond1_b += rowsum(dc1);
      MatrixXd de = sp.cond1_w.transpose() * dc1;
      for (Eigen::Index b = 0; b < B; ++b)
        g->dir_embed.col(in.dir[b]) += de.col(b);
    }

    if (g) {
      g->stream[s].in_ln_g +=
          rowsum((dh[s].array() * sa.xhat_in.array()).matrix());
      g->stream[s].in_ln_b += rowsum(dh[s]);
    }
    MatrixXd dxhat = dh[s].array().colwise() * sp.in_ln_g.array();
    MatrixXd dxin = ln_backward(dxhat, sa.xhat_in, sa.istd_in);
    if (g) {
      const MatrixXd& z = s == 0 ? in.z_img : in.z_txt;
      g->stream[s].in_w.noalias() += dxin * z.transpose();
      g->stream[s].in_b += rowsum(dxin);
    }
    MatrixXd* dz = s == 0 ? req.dz_img : req.dz_txt;
    if (dz) dz->noalias() = sp.in_w.transpose() * dxin;
  }
}

double masked_cfm_loss(const NetParams& p, const LossBatch& b, Geometry geom,
                       bool train_mode, Rng* dropout_rng, NetParams* grads,
                       Activations& acts) {
  const auto B = b.in.size();
  const int d = p.cfg.embed_dim;
  net_forward(p, b.in, train_mode, dropout_rng, acts);

  MatrixXd df_img = MatrixXd::Zero(d, B), df_txt = MatrixXd::Zero(d, B);
  VectorXd per_sample = VectorXd::Zero(B);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (int s = 0; s < 2; ++s) {
    const MatrixXd& f = acts.stream[s].f;
    const MatrixXd& z = s == 0 ? b.in.z_img : b.in.z_txt;
    const MatrixXd& tgt = s == 0 ? b.target_img : b.target_txt;
    const auto& move = s == 0 ? b.move_img : b.move_txt;
    MatrixXd& df = s == 0 ? df_img : df_txt;
    for (Eigen::Index j = 0; j < B; ++j) {
      if (!move[j]) continue;
      VectorXd r;
      if (geom == Geometry::Riemannian) {
        const VectorXd fj = f.col(j);
        r = fj - z.col(j).dot(fj) * z.col(j) - tgt.col(j);
        df.col(j) = (2.0 * inv_b) * (r - z.col(j).dot(r) * z.col(j));
      } else {
        r = f.col(j) - tgt.col(j);
        df.col(j) = (2.0 * inv_b) * r;
      }
      per_sample[j] += r.squaredNorm();
    }
  }
  const double loss = per_sample.sum() * inv_b;
  if (!std::isfinite(loss)) {
    for (Eigen::Index j = 0; j < B; ++j)
      if (!std::isfinite(per_sample[j]))
        throw NumericalError("non-finite loss at sample " + std::to_string(j));
    throw NumericalError("non-finite loss");
  }
  if (grads) {
    BackwardRequest req;
    req.df_img = &df_img;
    req.df_txt = &df_txt;
    req.grads = grads;
    net_backward(p, b.in, acts, req);
  }
  return loss;
}

}  // namespace geoflow
