#include "geoflow/trainer.hpp"

#include <cmath>
#include <limits>

#include "geoflow/sphere.hpp"

namespace geoflow {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be nonnegative");
  if (warmup_steps < 0 || total_steps <= 0 || warmup_steps >= total_steps)
    throw ConfigError("need 0 <= warmup_steps < total_steps");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (curriculum.phase1_frac < 0.0 || curriculum.phase2_frac < 0.0 ||
      curriculum.phase1_frac + curriculum.phase2_frac > 1.0)
    throw ConfigError("curriculum phase fractions must be nonnegative, sum <= 1");
  if (curriculum.p_joint_target < 0.0 || curriculum.p_joint_target > 1.0)
    throw ConfigError("p_joint_target must be in [0, 1]");
  if (p_uncond < 0.0 || p_uncond > 1.0) throw ConfigError("p_uncond must be in [0, 1]");
  if (validation.every < 1 || validation.batches < 1 || validation.patience < 1)
    throw ConfigError("validation cadence fields must be positive");
}

NetConfig desk_net_config() {
  NetConfig c;
  c.embed_dim = 3;
  c.hidden_dim = 64;
  c.depth = 2;
  c.gate_heads = 2;
  return c;
}

TrainConfig desk_train_config() {
  TrainConfig c;
  c.batch_size = 256;
  c.total_steps = 12000;
  c.warmup_steps = 600;
  c.validation.every = 250;
  c.validation.batches = 5;
  c.validation.patience = 12;
  c.seed = 1;
  return c;
}

MaskProbs mask_probabilities(int step, const TrainConfig& c) {
  const double t1 = c.curriculum.phase1_frac * c.total_steps;
  const double t2 = c.curriculum.phase2_frac * c.total_steps;
  double pj;
  if (step < t1) {
    pj = 0.0;
  } else if (step < t1 + t2 && t2 > 0.0) {
    pj = c.curriculum.p_joint_target * (step - t1) / t2;
  } else {
    pj = c.curriculum.p_joint_target;
  }
  const double pc = 0.5 * (1.0 - pj);
  return {pj, pc, pc};
}

double lr_at(int step, const TrainConfig& c) {
  if (step < c.warmup_steps)
    return c.lr * static_cast<double>(step) / c.warmup_steps;
  const double prog = static_cast<double>(step - c.warmup_steps) /
                      (c.total_steps - c.warmup_steps);
  return c.lr * 0.5 * (1.0 + std::cos(M_PI * prog));
}

StreamTimes stream_times(MaskKind kind, double t) {
  switch (kind) {
    case MaskKind::ImageToText: return {0.0, t};
    case MaskKind::TextToImage: return {t, 0.0};
    default: return {t, t};
  }
}

bool validation_improved(double best, double v, const ValidationConfig& c) {
  const double gain = best - v;
  return gain >= c.min_abs_improve || gain >= c.min_rel_improve * std::abs(best);
}

Trainer::Trainer(NetParams params, TrainConfig cfg, Geometry geom)
    : params_(std::move(params)),
      adam_m_(zeros_like(params_)),
      adam_v_(zeros_like(params_)),
      cfg_(std::move(cfg)),
      geom_(geom) {
  cfg_.validate();
}

LossBatch Trainer::build_batch(const PairedData& data, Rng idx_rng, Rng noise_rng,
                               Rng mask_rng, Rng time_rng, Rng cfg_rng,
                               const MaskProbs& probs) {
  const int B = cfg_.batch_size;
  const int d = params_.cfg.embed_dim;
  const auto n = data.size();
  if (n < 1) throw DataError("empty training data");

  MatrixXd data_img(d, B), data_txt(d, B), noise_img(d, B), noise_txt(d, B);
  for (int j = 0; j < B; ++j) {
    const auto i = idx_rng.below(static_cast<std::uint64_t>(n));
    data_img.col(j) = data.img.col(static_cast<Eigen::Index>(i));
    data_txt.col(j) = data.txt.col(static_cast<Eigen::Index>(i));
  }
  for (int j = 0; j < B; ++j) {
    noise_img.col(j) = sample_uniform_sphere(d, noise_rng);
    noise_txt.col(j) = sample_uniform_sphere(d, noise_rng);
  }

  // Rows of the cost are the data samples, so hardening keeps every data
  // point and selects its plan-argmax noise draw.
  const MatrixXd cost =
      product_geodesic_cost(data_img, data_txt, noise_img, noise_txt);
  const TransportPlan plan = sinkhorn_plan(cost, cfg_.sinkhorn);
  const TransportAssignment assign = harden_assignment(plan, cost);

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

  const bool euclid = geom_ == Geometry::Euclidean;
  auto interp = [&](const VectorXd& z0, const VectorXd& z1, double t) {
    return euclid ? VectorXd(z0 + t * (z1 - z0)) : geodesic_interpolate(z0, z1, t);
  };
  auto vel = [&](const VectorXd& z0, const VectorXd& z1, double t) {
    return euclid ? VectorXd(z1 - z0) : geodesic_velocity(z0, z1, t);
  };

  for (int j = 0; j < B; ++j) {
    const VectorXd n_img = noise_img.col(assign.target_index[j]);
    const VectorXd n_txt = noise_txt.col(assign.target_index[j]);
    const VectorXd d_img = data_img.col(j);
    const VectorXd d_txt = data_txt.col(j);

    const double u_mask = mask_rng.uniform();
    const double t = time_rng.uniform();
    const double u_cfg = cfg_rng.uniform();

    MaskKind kind;
    if (u_mask < probs.joint)
      kind = MaskKind::Joint;
    else if (u_mask < probs.joint + probs.i2t)
      kind = MaskKind::ImageToText;
    else
      kind = MaskKind::TextToImage;
    const bool uncond = kind != MaskKind::Joint && u_cfg < cfg_.p_uncond;

    b.in.dir[j] = static_cast<int>(kind);
    const StreamTimes st = stream_times(kind, t);
    b.in.t_img[j] = st.img;
    b.in.t_txt[j] = st.txt;
    switch (kind) {
      case MaskKind::Joint:
        b.in.z_img.col(j) = interp(n_img, d_img, t);
        b.in.z_txt.col(j) = interp(n_txt, d_txt, t);
        b.target_img.col(j) = vel(n_img, d_img, t);
        b.target_txt.col(j) = vel(n_txt, d_txt, t);
        b.move_img[j] = b.move_txt[j] = 1;
        break;
      case MaskKind::ImageToText:
        b.in.z_img.col(j) = uncond ? n_img : d_img;
        b.in.z_txt.col(j) = interp(n_txt, d_txt, t);
        b.target_txt.col(j) = vel(n_txt, d_txt, t);
        b.move_txt[j] = 1;
        break;
      case MaskKind::TextToImage:
        b.in.z_txt.col(j) = uncond ? n_txt : d_txt;
        b.in.z_img.col(j) = interp(n_img, d_img, t);
        b.target_img.col(j) = vel(n_img, d_img, t);
        b.move_img[j] = 1;
        break;
    }
  }
  return b;
}

StepMetrics Trainer::step(const PairedData& train) {
  const Rng root(cfg_.seed);
  const MaskProbs probs = mask_probabilities(step_, cfg_);
  LossBatch batch = build_batch(
      train, root.fork(rng_stream::kBatch, step_),
      root.fork(rng_stream::kTrainNoise, step_),
      root.fork(rng_stream::kTrainMask, step_),
      root.fork(rng_stream::kTrainTime, step_),
      root.fork(rng_stream::kCfgDropout, step_), probs);

  NetParams grads = zeros_like(params_);
  Rng drop_rng = root.fork(rng_stream::kDropout, step_);
  const double loss =
      masked_cfm_loss(params_, batch, geom_, true, &drop_rng, &grads, acts_);

  const double lr = lr_at(step_, cfg_);
  double grad_norm = 0.0;
  apply_adamw(grads, lr, &grad_norm);

  StepMetrics m{step_, loss, lr, grad_norm, probs.joint};
  ++step_;
  return m;
}

void Trainer::apply_adamw(const NetParams& grads, double lr, double* grad_norm) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto pv = tensor_views(params_);
  auto gv = tensor_views(const_cast<NetParams&>(grads));
  auto mv = tensor_views(adam_m_);
  auto vv = tensor_views(adam_v_);

  double sq = 0.0;
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (!gv[i].trainable) continue;
    for (Eigen::Index k = 0; k < gv[i].size; ++k) sq += gv[i].data[k] * gv[i].data[k];
  }
  const double norm = std::sqrt(sq);
  if (grad_norm) *grad_norm = norm;
  const double scale =
      (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;

  const double t = static_cast<double>(step_ + 1);
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!pv[i].trainable) continue;
    double* th = pv[i].data;
    double* g = gv[i].data;
    double* m = mv[i].data;
    double* v = vv[i].data;
    for (Eigen::Index k = 0; k < pv[i].size; ++k) {
      const double gk = g[k] * scale;
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      th[k] -= lr * (mhat / (std::sqrt(vhat) + eps) + cfg_.weight_decay * th[k]);
    }
  }
}

double Trainer::validation_loss(const PairedData& val) {
  const Rng root(cfg_.seed);
  const MaskProbs probs = mask_probabilities(step_, cfg_);
  double total = 0.0;
  for (int b = 0; b < cfg_.validation.batches; ++b) {
    const Rng base = root.fork(rng_stream::kValidation, b);
    LossBatch batch = build_batch(val, base.fork(1), base.fork(2), base.fork(3),
                                  base.fork(4), base.fork(5), probs);
    total += masked_cfm_loss(params_, batch, geom_, false, nullptr, nullptr, acts_);
  }
  return total / cfg_.validation.batches;
}

Trainer::RunResult Trainer::run(
    const PairedData& train, const PairedData& val,
    const std::function<void(const StepMetrics&)>& on_metrics,
    const std::function<void(const NetParams&, int, double)>& on_best,
    const std::function<void(int, double, double)>& on_validation) {
  RunResult r;
  double best = std::numeric_limits<double>::infinity();
  bool have_best = false;
  int bad = 0;

  while (step_ < cfg_.total_steps) {
    const StepMetrics m = step(train);
    if (on_metrics) on_metrics(m);
    const bool last = step_ == cfg_.total_steps;
    if (step_ % cfg_.validation.every == 0 || last) {
      const double v = validation_loss(val);
      if (on_validation) on_validation(step_, v, have_best ? best : v);
      if (!have_best) {
        best = v;
        have_best = true;
        if (on_best) on_best(params_, step_, v);
      } else {
        if (validation_improved(best, v, cfg_.validation)) {
          best = v;
          bad = 0;
          if (on_best) on_best(params_, step_, v);
        } else if (++bad >= cfg_.validation.patience) {
          r.early_stopped = true;
          break;
        }
      }
    }
  }
  r.steps_run = step_;
  r.best_val = best;
  return r;
}

}  // namespace geoflow
