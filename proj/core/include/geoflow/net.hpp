#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geoflow/common.hpp"
#include "geoflow/mask.hpp"
#include "geoflow/rng.hpp"

namespace geoflow {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

struct NetConfig {
  int embed_dim = 3;    // ambient dim of each sphere
  int hidden_dim = 64;
  int depth = 2;        // dual-stream blocks
  int gate_heads = 2;
  double dropout_rate = 0.05;
  int rff_features = 128;
  double rff_scale = 10.0;

  int head_dim() const { return hidden_dim / gate_heads; }
  void validate() const;
};

// One gated cross-stream block, one stream's half. The modulation
// projections and the value maps start at zero so a fresh block is an
// identity on the residual stream.
struct StreamBlockParams {
  MatrixXd mod1_w, mod2_w;  // 2H x H, rows [0,H) shift, [H,2H) scale
  VectorXd mod1_b, mod2_b;
  std::vector<MatrixXd> cg_gate, cg_val;  // per head, head_dim x head_dim
  MatrixXd ff_gate, ff_val;               // H x H
  VectorXd ls1, ls2;                      // per-channel residual scales
};

struct StreamParams {
  MatrixXd in_w;                 // H x d
  VectorXd in_b, in_ln_g, in_ln_b;
  MatrixXd cond1_w;              // H x 2F
  VectorXd cond1_b;
  MatrixXd cond2_w;              // H x H
  VectorXd cond2_b;
  std::vector<StreamBlockParams> blocks;
  VectorXd dec_ln_g, dec_ln_b;
  MatrixXd dec_w;                // d x H, zero at init
  VectorXd dec_b;
};

struct NetParams {
  NetConfig cfg;
  VectorXd rff_freq;    // F frozen frequencies, shared by both streams
  MatrixXd dir_embed;   // 2F x 3, one column per flow direction id
  std::array<StreamParams, 2> stream;  // [0] image, [1] text
};

// Flat view of one parameter tensor; enumeration order is fixed, so two
// structurally equal NetParams yield aligned view lists (used by the
// optimizer, checkpoints and the finite-difference harness).
struct TensorView {
  std::string name;
  double* data;
  Eigen::Index size;
  bool trainable;
};
std::vector<TensorView> tensor_views(NetParams& p);

NetParams init_params(const NetConfig& cfg, Rng& rng);
NetParams zeros_like(const NetParams& p);

// One training/inference batch; columns are samples.
struct NetBatch {
  MatrixXd z_img, z_txt;  // d x B
  VectorXd t_img, t_txt;  // B
  VectorXi dir;           // B, values in {0, 1, 2}

  Eigen::Index size() const { return dir.size(); }
};

// Forward cache. Public so tests can assert on internals (AdaLN identity at
// init, gate head isolation); treat as read-only outside net.cpp.
struct StreamBlockActs {
  MatrixXd n1hat, mod1, x1, gsig, u, cgo;
  MatrixXd n2hat, mod2, x2, ffa, ffsig, ffb, ffprod, dropscale;
  RowVectorXd istd1, istd2;
};
struct StreamActs {
  MatrixXd xin, xhat_in, h0;
  RowVectorXd istd_in;
  MatrixXd rff, e, c1, s1, c, sc, c_sig, c1_sig;
  std::vector<StreamBlockActs> blocks;
  MatrixXd h_final, dhat, aff;
  RowVectorXd istd_dec;
  MatrixXd f;  // raw output, d x B
};
struct Activations {
  std::array<StreamActs, 2> stream;
};

// Evaluates both stream outputs. train_mode enables dropout, which draws
// from *dropout_rng (required in that case).
void net_forward(const NetParams& p, const NetBatch& in, bool train_mode,
                 Rng* dropout_rng, Activations& acts);

struct BackwardRequest {
  const MatrixXd* df_img = nullptr;  // cotangent on image output, d x B
  const MatrixXd* df_txt = nullptr;
  NetParams* grads = nullptr;        // accumulated when non-null
  MatrixXd* dz_img = nullptr;        // input cotangent out, d x B
  MatrixXd* dz_txt = nullptr;
};

// Reverse pass over a cached forward. Multiple calls against the same
// Activations are allowed (the cache is not consumed).
void net_backward(const NetParams& p, const NetBatch& in, const Activations& acts,
                  const BackwardRequest& req);

// Masked flow-matching regression batch: states, targets and per-sample
// transported flags (0 pins the block, its residual is dropped).
struct LossBatch {
  NetBatch in;
  MatrixXd target_img, target_txt;        // d x B
  std::vector<std::uint8_t> move_img, move_txt;
};

// Mean over the batch of the squared masked residual between the (tangent-
// projected, in Riemannian geometry) net output and the target velocity.
// Accumulates parameter gradients into *grads when non-null. Throws
// NumericalError naming the first offending sample if the loss is not
// finite.
double masked_cfm_loss(const NetParams& p, const LossBatch& b, Geometry geom,
                       bool train_mode, Rng* dropout_rng, NetParams* grads,
                       Activations& acts);

}  // namespace geoflow
