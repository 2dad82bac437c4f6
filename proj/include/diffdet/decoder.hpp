#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "diffdet/agent_queries.hpp"
#include "diffdet/autodiff.hpp"
#include "diffdet/params.hpp"

namespace diffdet::decoder {

using ad::Mat;
using ad::Var;

/// Decoded box hypotheses conditioning the decoder: FPS centers plus sizes and
/// per-class label weights recovered from the diffusion state.
struct NoisyBoxes {
  Mat centers;   // N_Q x 3, meters
  Mat sizes;     // N_Q x 3, meters, strictly positive
  Mat labels01;  // N_Q x N_cls in [0,1]
};

struct DecoderConfig {
  int n_layers = 3;  // #DL
  int n_heads = 4;
  int feat_dim = 64;  // C, must be divisible by n_heads
  int ffn_hidden = 128;
  int box_mlp_hidden = 32;
  int rpe_hidden = 16;
  int n_classes = 6;
  double center_offset_frac = 0.3;  // tanh radius as a fraction of the scene diagonal
  double size_head_scale = 1.0;

  void validate() const;
};

void init_params(ad::ParamStore& store, const std::string& prefix, const DecoderConfig& cfg,
                 Rng& rng);

/// Per-query box prediction. objectness/iou_est are the logistic outputs;
/// the *_logit twins stay available for loss computation.
struct DetectorOutputVars {
  Var center;      // N_Q x 3
  Var size;        // N_Q x 3, positive
  Var cls_logits;  // N_Q x N_cls
  Var obj_logit;   // N_Q x 1
  Var iou_logit;   // N_Q x 1
  Var objectness;  // sigmoid(obj_logit)
  Var iou_est;     // sigmoid(iou_logit)
};

/// Value-only snapshot for the non-training paths.
struct DetectorOutput {
  Mat center;
  Mat size;
  Mat cls_logits;
  Eigen::VectorXd objectness;
  Eigen::VectorXd iou_est;
};

DetectorOutput snapshot(const DetectorOutputVars& v);

/// MLP(b_i) term of the box-conditioned attention; input is the concatenated
/// (center, size, labels01) row per query.
Var box_embed(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
              const NoisyBoxes& noisy);

/// Optional capture of attention matrices (one per head) for inspection.
struct AttnDebug {
  std::vector<Mat> head_attn;
};

/// Bare multi-head self-attention with the additive box term on the
/// query/key paths and plain value projection (no residual, no norm).
Var boxaware_self_attention_core(ad::Tape& tape, ad::ParamStore& store,
                                 const std::string& prefix, const DecoderConfig& cfg,
                                 Var queries, const NoisyBoxes& noisy,
                                 AttnDebug* dbg = nullptr);

/// queries + core(queries): the public box-aware self-attention update.
Var boxaware_self_attention(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                            const DecoderConfig& cfg, Var queries, const NoisyBoxes& noisy,
                            AttnDebug* dbg = nullptr);

/// Vertex relative position encoding: per point, offsets to the 8 box corners
/// in the box's center-origin axis-aligned frame, normalized by the box
/// diagonal, through a two-layer MLP emitting one bias per head. Returns
/// H x m for a single box.
Var rpe_encode(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
               const DecoderConfig& cfg, const Eigen::Vector3d& box_center,
               const Eigen::Vector3d& box_size, const Mat& points);

/// Bare multi-head cross-attention over scene features with the RPE bias of
/// each query's noisy box added to the logits (no residual, no norm).
Var boxaware_cross_attention_core(ad::Tape& tape, ad::ParamStore& store,
                                  const std::string& prefix, const DecoderConfig& cfg,
                                  Var queries, Var feats, const Mat& feat_coords,
                                  const NoisyBoxes& noisy, AttnDebug* dbg = nullptr);

Var boxaware_cross_attention(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                             const DecoderConfig& cfg, Var queries, Var feats,
                             const Mat& feat_coords, const NoisyBoxes& noisy,
                             AttnDebug* dbg = nullptr);

/// Prediction heads: center = noisy center + tanh-bounded offset, size =
/// softplus * scale, class logits, logistic objectness and IoU estimate.
DetectorOutputVars predict_boxes(ad::Tape& tape, ad::ParamStore& store,
                                 const std::string& prefix, const DecoderConfig& cfg,
                                 Var queries, const Mat& centers, double scene_diag);

/// Fourier features of bounds-normalized coordinates (m x 27), the positional
/// payload added to point tokens before cross-attention.
Mat fourier_positions(const Mat& coords, const agent_queries::SceneBounds& bounds);

/// Timestep-conditioned decoder stack: sinusoidal embedding of t projected to
/// C and added to every query; point tokens get a projected Fourier position
/// code; then n_layers pre-norm blocks (self-attention, cross-attention,
/// feed-forward), a final norm, then predict_boxes. With n_layers == 0 the
/// heads see the raw queries.
DetectorOutputVars decode_forward(ad::Tape& tape, ad::ParamStore& store,
                                  const std::string& prefix, const DecoderConfig& cfg,
                                  Var queries, Var feats, const Mat& feat_coords,
                                  const NoisyBoxes& noisy, int t, int max_t,
                                  const agent_queries::SceneBounds& bounds);

/// Sinusoidal position code of an integer timestep, 1 x dim.
Mat timestep_code(int t, int dim);

}  // namespace diffdet::decoder
