#include "diffdet/decoder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffdet::decoder {

void DecoderConfig::validate() const {
  if (n_layers < 0) throw std::invalid_argument("decoder: n_layers must be >= 0");
  if (n_heads < 1 || feat_dim % n_heads != 0)
    throw std::invalid_argument("decoder: feat_dim must be divisible by n_heads");
  if (n_classes < 1) throw std::invalid_argument("decoder: n_classes must be >= 1");
}

namespace {

void init_linear(ad::ParamStore& s, const std::string& name, int in, int out, Rng& rng,
                 bool zero = false) {
  s.add(name + ".W", zero ? Mat::Zero(in, out) : ad::xavier_uniform(in, out, rng));
  s.add(name + ".b", Mat::Zero(1, out));
}

Var linear(ad::Tape& t, ad::ParamStore& s, const std::string& name, Var x) {
  return ad::add_rowvec(ad::matmul(x, ad::leaf(t, s.at(name + ".W"))),
                        ad::leaf(t, s.at(name + ".b")));
}

void init_layernorm(ad::ParamStore& s, const std::string& name, int dim) {
  s.add(name + ".g", Mat::Ones(1, dim));
  s.add(name + ".b", Mat::Zero(1, dim));
}

Var layernorm(ad::Tape& t, ad::ParamStore& s, const std::string& name, Var x) {
  return ad::layernorm_rows(x, ad::leaf(t, s.at(name + ".g")), ad::leaf(t, s.at(name + ".b")));
}

/// Multi-head attention core shared by self/cross paths: per-head scaled dot
/// product with an optional additive logit bias, heads concatenated through
/// the output projection.
Var mha(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
        const DecoderConfig& cfg, Var q_in, Var k_in, Var v_in,
        const std::vector<Var>* logit_bias, AttnDebug* dbg) {
  const int dh = cfg.feat_dim / cfg.n_heads;
  Var q = linear(tape, store, prefix + ".q", q_in);
  Var k = linear(tape, store, prefix + ".k", k_in);
  Var v = linear(tape, store, prefix + ".v", v_in);
  std::vector<Var> heads;
  heads.reserve(cfg.n_heads);
  for (int h = 0; h < cfg.n_heads; ++h) {
    Var qh = ad::slice_cols(q, h * dh, dh);
    Var kh = ad::slice_cols(k, h * dh, dh);
    Var vh = ad::slice_cols(v, h * dh, dh);
    Var logits = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(double(dh)));
    if (logit_bias) logits = ad::add(logits, (*logit_bias)[h]);
    Var attn = ad::softmax_rows(logits);
    if (dbg) dbg->head_attn.push_back(attn.val());
    heads.push_back(ad::matmul(attn, vh));
  }
  return linear(tape, store, prefix + ".o", ad::concat_cols(heads));
}

Mat noisy_box_rows(const NoisyBoxes& noisy) {
  Mat rows(noisy.centers.rows(), 6 + noisy.labels01.cols());
  rows << noisy.centers, noisy.sizes, noisy.labels01;
  return rows;
}

}  // namespace

void init_params(ad::ParamStore& store, const std::string& prefix, const DecoderConfig& cfg,
                 Rng& rng) {
  cfg.validate();
  const int c = cfg.feat_dim;
  init_linear(store, prefix + ".temb", c, c, rng);
  init_linear(store, prefix + ".posenc", 27, c, rng);
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::string lp = prefix + ".blk" + std::to_string(l);
    init_linear(store, lp + ".boxmlp.1", 6 + cfg.n_classes, cfg.box_mlp_hidden, rng);
    init_linear(store, lp + ".boxmlp.2", cfg.box_mlp_hidden, c, rng);
    for (const char* a : {".self", ".cross"}) {
      init_linear(store, lp + a + ".q", c, c, rng);
      init_linear(store, lp + a + ".k", c, c, rng);
      init_linear(store, lp + a + ".v", c, c, rng);
      init_linear(store, lp + a + ".o", c, c, rng);
    }
    init_linear(store, lp + ".rpe.1", 24, cfg.rpe_hidden, rng);
    init_linear(store, lp + ".rpe.2", cfg.rpe_hidden, cfg.n_heads, rng);
    if (cfg.rpe_hidden >= 6) {
      // Seed a locality kernel: sum of the 8 vertex offsets is 8(p-c)/diag,
      // so +-axis sums through relu recover the L1 distance to the box center.
      Mat& w1 = store.at(lp + ".rpe.1.W").value;
      for (int axis = 0; axis < 3; ++axis)
        for (int u = 0; u < 2; ++u) {
          int col = 2 * axis + u;
          for (Eigen::Index r = 0; r < 24; ++r) w1(r, col) = 0.0;
          for (int j = 0; j < 8; ++j) w1(3 * j + axis, col) = u == 0 ? 0.125 : -0.125;
        }
      Mat& w2 = store.at(lp + ".rpe.2.W").value;
      for (int col = 0; col < cfg.n_heads; ++col)
        for (int r = 0; r < 6; ++r) w2(r, col) = -3.0;
    }
    init_linear(store, lp + ".ffn.1", c, cfg.ffn_hidden, rng);
    init_linear(store, lp + ".ffn.2", cfg.ffn_hidden, c, rng);
    init_layernorm(store, lp + ".ln1", c);
    init_layernorm(store, lp + ".ln2", c);
    init_layernorm(store, lp + ".ln3", c);
  }
  init_layernorm(store, prefix + ".lnf", cfg.feat_dim);
  // Heads start at zero: boxes begin exactly at their noisy centers.
  init_linear(store, prefix + ".head.center", c, 3, rng, /*zero=*/true);
  init_linear(store, prefix + ".head.size", c, 3, rng, /*zero=*/true);
  init_linear(store, prefix + ".head.cls", c, cfg.n_classes, rng, /*zero=*/true);
  init_linear(store, prefix + ".head.obj", c, 1, rng, /*zero=*/true);
  init_linear(store, prefix + ".head.iou", c, 1, rng, /*zero=*/true);
}

Var box_embed(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
              const NoisyBoxes& noisy) {
  Var x = ad::constant(tape, noisy_box_rows(noisy));
  Var h = ad::relu(linear(tape, store, prefix + ".1", x));
  return linear(tape, store, prefix + ".2", h);
}

Var boxaware_self_attention_core(ad::Tape& tape, ad::ParamStore& store,
                                 const std::string& prefix, const DecoderConfig& cfg,
                                 Var queries, const NoisyBoxes& noisy, AttnDebug* dbg) {
  if (queries.rows() != noisy.centers.rows())
    throw std::invalid_argument("self_attention: query/box count mismatch");
  Var qb = ad::add(queries, box_embed(tape, store, prefix + ".boxmlp", noisy));
  return mha(tape, store, prefix + ".self", cfg, qb, qb, queries, nullptr, dbg);
}

Var boxaware_self_attention(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                            const DecoderConfig& cfg, Var queries, const NoisyBoxes& noisy,
                            AttnDebug* dbg) {
  return ad::add(queries,
                 boxaware_self_attention_core(tape, store, prefix, cfg, queries, noisy, dbg));
}

namespace {

/// Flattened 24-dim vertex-offset featurization for each (box, point) pair,
/// rows ordered box-major.
Mat rpe_features(const Mat& centers, const Mat& sizes, const Mat& points) {
  Eigen::Index nq = centers.rows(), m = points.rows();
  Mat feats(nq * m, 24);
  for (Eigen::Index i = 0; i < nq; ++i) {
    Eigen::Vector3d c = centers.row(i).transpose();
    Eigen::Vector3d half = sizes.row(i).transpose() / 2.0;
    double diag = std::max(1e-9, sizes.row(i).norm());
    for (Eigen::Index k = 0; k < m; ++k) {
      Eigen::Vector3d d = points.row(k).transpose() - c;  // canonical frame, yaw = 0
      int col = 0;
      for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2)
          for (int sz = -1; sz <= 1; sz += 2) {
            feats(i * m + k, col + 0) = (d(0) - sx * half(0)) / diag;
            feats(i * m + k, col + 1) = (d(1) - sy * half(1)) / diag;
            feats(i * m + k, col + 2) = (d(2) - sz * half(2)) / diag;
            col += 3;
          }
    }
  }
  return feats;
}

std::vector<Var> rpe_bias_heads(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                                const DecoderConfig& cfg, const NoisyBoxes& noisy,
                                const Mat& points) {
  Eigen::Index nq = noisy.centers.rows(), m = points.rows();
  Var x = ad::constant(tape, rpe_features(noisy.centers, noisy.sizes, points));
  Var h = ad::relu(linear(tape, store, prefix + ".1", x));
  Var out = linear(tape, store, prefix + ".2", h);  // (nq*m) x H
  std::vector<Var> biases;
  biases.reserve(cfg.n_heads);
  for (int hd = 0; hd < cfg.n_heads; ++hd)
    biases.push_back(ad::reshape_rowmajor(ad::slice_cols(out, hd, 1), nq, m));
  return biases;
}

}  // namespace

Var rpe_encode(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
               const DecoderConfig& cfg, const Eigen::Vector3d& box_center,
               const Eigen::Vector3d& box_size, const Mat& points) {
  (void)cfg;
  if (box_size.minCoeff() <= 0.0) throw std::invalid_argument("rpe_encode: box sizes must be positive");
  Mat c(1, 3), s(1, 3);
  c.row(0) = box_center.transpose();
  s.row(0) = box_size.transpose();
  Var x = ad::constant(tape, rpe_features(c, s, points));
  Var h = ad::relu(linear(tape, store, prefix + ".1", x));
  Var out = linear(tape, store, prefix + ".2", h);  // m x H
  return ad::transpose(out);                        // H x m
}

Var boxaware_cross_attention_core(ad::Tape& tape, ad::ParamStore& store,
                                  const std::string& prefix, const DecoderConfig& cfg,
                                  Var queries, Var feats, const Mat& feat_coords,
                                  const NoisyBoxes& noisy, AttnDebug* dbg) {
  if (feats.rows() < 1) throw std::invalid_argument("cross_attention: empty scene features");
  if (feats.rows() != feat_coords.rows())
    throw std::invalid_argument("cross_attention: features/coords mismatch");
  std::vector<Var> bias = rpe_bias_heads(tape, store, prefix + ".rpe", cfg, noisy, feat_coords);
  return mha(tape, store, prefix + ".cross", cfg, queries, feats, feats, &bias, dbg);
}

Var boxaware_cross_attention(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                             const DecoderConfig& cfg, Var queries, Var feats,
                             const Mat& feat_coords, const NoisyBoxes& noisy, AttnDebug* dbg) {
  return ad::add(queries, boxaware_cross_attention_core(tape, store, prefix, cfg, queries,
                                                        feats, feat_coords, noisy, dbg));
}

DetectorOutputVars predict_boxes(ad::Tape& tape, ad::ParamStore& store,
                                 const std::string& prefix, const DecoderConfig& cfg,
                                 Var queries, const Mat& centers, double scene_diag) {
  DetectorOutputVars out;
  double radius = cfg.center_offset_frac * scene_diag;
  Var offs = ad::scale(ad::tanh_act(linear(tape, store, prefix + ".head.center", queries)),
                       radius);
  out.center = ad::add(offs, ad::constant(tape, centers));
  out.size = ad::scale(ad::softplus(linear(tape, store, prefix + ".head.size", queries)),
                       cfg.size_head_scale);
  out.cls_logits = linear(tape, store, prefix + ".head.cls", queries);
  out.obj_logit = linear(tape, store, prefix + ".head.obj", queries);
  out.iou_logit = linear(tape, store, prefix + ".head.iou", queries);
  out.objectness = ad::sigmoid(out.obj_logit);
  out.iou_est = ad::sigmoid(out.iou_logit);
  return out;
}

Mat fourier_positions(const Mat& coords, const agent_queries::SceneBounds& bounds) {
  Mat out(coords.rows(), 27);
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    Eigen::Vector3d u = bounds.normalize(coords.row(i).transpose());
    int col = 0;
    for (int a = 0; a < 3; ++a) out(i, col++) = u(a);
    for (int k : {1, 2, 4, 8}) {
      for (int a = 0; a < 3; ++a) {
        out(i, col++) = std::sin(2.0 * std::numbers::pi * k * u(a));
        out(i, col++) = std::cos(2.0 * std::numbers::pi * k * u(a));
      }
    }
  }
  return out;
}

Mat timestep_code(int t, int dim) {
  Mat code = Mat::Zero(1, dim);
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    code(0, i) = std::sin(t * freq);
    code(0, half + i) = std::cos(t * freq);
  }
  return code;
}

DetectorOutputVars decode_forward(ad::Tape& tape, ad::ParamStore& store,
                                  const std::string& prefix, const DecoderConfig& cfg,
                                  Var queries, Var feats, const Mat& feat_coords,
                                  const NoisyBoxes& noisy, int t, int max_t,
                                  const agent_queries::SceneBounds& bounds) {
  if (t < 0 || t >= max_t) throw std::invalid_argument("decode_forward: t out of range");
  Var x = queries;
  if (cfg.n_layers > 0) {
    Var temb = linear(tape, store, prefix + ".temb",
                      ad::constant(tape, timestep_code(t, cfg.feat_dim)));
    x = ad::add_rowvec(x, temb);
    // queries and point tokens share one positional code so the content term
    // can localize; values carry position so heads can express offsets
    x = ad::add(x, linear(tape, store, prefix + ".posenc",
                          ad::constant(tape, fourier_positions(noisy.centers, bounds))));
    Var tokens = ad::add(feats, linear(tape, store, prefix + ".posenc",
                                       ad::constant(tape, fourier_positions(feat_coords,
                                                                            bounds))));
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string lp = prefix + ".blk" + std::to_string(l);
      x = ad::add(x, boxaware_self_attention_core(tape, store, lp, cfg,
                                                  layernorm(tape, store, lp + ".ln1", x),
                                                  noisy));
      x = ad::add(x, boxaware_cross_attention_core(tape, store, lp, cfg,
                                                   layernorm(tape, store, lp + ".ln2", x),
                                                   tokens, feat_coords, noisy));
      Var h = ad::relu(linear(tape, store, lp + ".ffn.1",
                              layernorm(tape, store, lp + ".ln3", x)));
      x = ad::add(x, linear(tape, store, lp + ".ffn.2", h));
    }
    x = layernorm(tape, store, prefix + ".lnf", x);
  }
  return predict_boxes(tape, store, prefix, cfg, x, noisy.centers, bounds.diagonal());
}

DetectorOutput snapshot(const DetectorOutputVars& v) {
  DetectorOutput o;
  o.center = v.center.val();
  o.size = v.size.val();
  o.cls_logits = v.cls_logits.val();
  o.objectness = v.objectness.val().col(0);
  o.iou_est = v.iou_est.val().col(0);
  return o;
}

}  // namespace diffdet::decoder
