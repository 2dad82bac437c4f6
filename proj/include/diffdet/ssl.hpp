#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffdet/detector.hpp"
#include "diffdet/diffusion.hpp"
#include "diffdet/evalkit.hpp"
#include "diffdet/synthdata.hpp"

namespace diffdet::ssl {

using ad::Mat;
using detector::DetectorConfig;
using detector::ScoredBox;

struct SSLConfig {
  double lambda_u = 1.0;
  double ema_decay = 0.999;
  int ddim_steps = 2;
  double size_noise_mean = 0.25;
  double objectness_min = 0.9;
  double class_conf_min = 0.9;
  double iou_est_min = 0.25;
  double renewal_threshold = 0.5;
  double ddim_eta = 0.0;  // deterministic reverse process by default
  double size_scale = 2.0;
  double label_scale = 2.0;
  int n_classes = 6;
  int max_t = 1000;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::kCosine;
  double warmup_frac = 0.2;  // supervised-only share of the run
  double ramp_frac = 0.1;    // lambda ramp after warmup, as a fraction of all iters
  double nms_iou = 0.25;

  void validate() const;
  diffusion::NoisePrior noise_prior() const {
    return {size_noise_mean, 1.0 / n_classes, size_scale, label_scale};
  }
};

/// Teacher predictions that survived the score filter and class-wise NMS.
struct PseudoLabelSet {
  std::vector<ScoredBox> boxes;
};

/// Thin wrapper over the diffusion-module prior matching the spec signature.
diffusion::DiffusionState sample_noise_prior(int n_queries, int n_classes, double size_mean,
                                             Rng& rng, double size_scale = 2.0,
                                             double label_scale = 2.0);

/// Per-slot targets padded to N_Q: sizes normalized by scene extent into
/// [0,1], one-hot labels, per-slot source-GT index (-1 when the scene has no
/// boxes and slots carry prior noise).
struct Targets {
  Mat sizes01;               // N_Q x 3
  Mat labels01;              // N_Q x N_cls
  std::vector<int> assignment;  // GT index per slot, or -1
};

Targets prepare_targets(const std::vector<BoundingBox3D>& gts, int n_queries,
                        const agent_queries::SceneBounds& bounds, int n_classes, Rng& rng,
                        const diffusion::NoisePrior& prior);

enum class MatchMode { kStudent, kTeacher };

/// Slot -> center pairing. Student mode: assigned slots claim their GT's
/// nearest unclaimed center (globally greedy by ascending distance, ties by
/// slot then center index); unassigned slots pair randomly with what remains.
/// Teacher mode: a uniform random permutation.
std::vector<int> match_noisy_to_queries(const Mat& centers, const Targets& targets,
                                        const std::vector<BoundingBox3D>& gts, MatchMode mode,
                                        Rng& rng);

/// Threshold predicates of the pseudo-label filter (pre-NMS stage); raising
/// any threshold can only shrink the kept set.
std::vector<bool> filter_keep_mask(const std::vector<ScoredBox>& preds, const SSLConfig& cfg);

/// Keep = all three thresholds passed, then class-wise NMS at nms_iou.
PseudoLabelSet filter_pseudo_labels(const std::vector<ScoredBox>& preds, const SSLConfig& cfg);

/// theta_t <- theta_s + decay * (theta_t - theta_s), elementwise over
/// structurally identical stores.
void ema_update(ad::ParamStore& teacher, const ad::ParamStore& student, double decay);

struct TeacherInferResult {
  PseudoLabelSet pls;
  std::vector<ScoredBox> raw;  // final decode pass, unfiltered
  int decode_passes = 0;       // one per DDIM time pair
};

/// Algorithm-1 inference: encode, adapt agents, FPS centers, interpolate
/// queries, sample the prior, then per DDIM time pair: random re-match,
/// decode, DDIM update, box renewal; finally filter + NMS.
TeacherInferResult teacher_infer(const Mat& points, ad::ParamStore& teacher,
                                 const std::string& prefix, const DetectorConfig& det_cfg,
                                 const SSLConfig& cfg, const diffusion::DiffusionSchedule& sched,
                                 Rng& rng, int ddim_steps_override = 0);

/// One scene with its supervision source (GT boxes or pseudo-labels).
struct TrainScene {
  Mat points;
  std::vector<BoundingBox3D> boxes;
};

struct LossBreakdown {
  double total = 0.0;
  double center = 0.0, size = 0.0, cls = 0.0, objectness = 0.0, iou = 0.0;
};

/// Algorithm-2 single-scene loss (graph rooted at `loss`): prepare targets,
/// signal-scale, corrupt at a shared uniform t, match, decode, detection loss.
struct SceneLossResult {
  ad::Var loss;
  LossBreakdown parts;
};
SceneLossResult student_scene_loss(ad::Tape& tape, ad::ParamStore& student,
                                   const std::string& prefix, const DetectorConfig& det_cfg,
                                   const SSLConfig& cfg,
                                   const diffusion::DiffusionSchedule& sched,
                                   const TrainScene& scene, Rng& rng);

struct StepResult {
  double loss = 0.0;
  double loss_l = 0.0;
  double loss_u = 0.0;
};

/// L = mean(labeled losses) + lambda_eff * mean(unlabeled losses), one Adam
/// step. Scenes are processed on per-scene tapes with weighted backward seeds
/// so the total gradient matches the combined loss exactly.
StepResult student_step(const std::vector<TrainScene>& labeled,
                        const std::vector<TrainScene>& unlabeled, double lambda_eff,
                        ad::ParamStore& student, const std::string& prefix,
                        const DetectorConfig& det_cfg, const SSLConfig& cfg,
                        const diffusion::DiffusionSchedule& sched, const ad::AdamConfig& adam,
                        long long adam_step_index, Rng& rng);

struct DatasetSplits {
  std::vector<synth::Scene> labeled;
  std::vector<synth::Scene> unlabeled;
  std::vector<synth::Scene> val;
};

struct MetricsRecord {
  long long iter = 0;
  double loss_l = 0.0;
  double loss_u = 0.0;
  int n_pseudo = 0;
  double pseudo_precision = 1.0;
  std::optional<double> map25;
  std::optional<double> map50;

  std::string to_json() const;
};

struct TrainConfig {
  int epochs = 20;
  ad::AdamConfig adam;
  int eval_every = 0;  // 0: final evaluation only
  std::uint64_t seed = 1;
};

struct TrainResult {
  ad::ParamStore teacher;
  ad::ParamStore student;
  std::vector<MetricsRecord> log;
};

/// Run inference over scenes and collect per-scene detection sets (raw
/// class-wise-NMS'd predictions, for mAP).
std::vector<evalkit::DetectionSet> evaluate_scenes(const std::vector<synth::Scene>& scenes,
                                                   ad::ParamStore& params,
                                                   const std::string& prefix,
                                                   const DetectorConfig& det_cfg,
                                                   const SSLConfig& cfg,
                                                   const diffusion::DiffusionSchedule& sched,
                                                   std::uint64_t seed, int ddim_steps = 0);

/// The mean-teacher loop: warm-up supervised phase, then teacher pseudo-labels
/// on weak views driving student steps on strong views, EMA after every step.
/// Fully deterministic given (splits, configs, seed).
TrainResult train(const DatasetSplits& data, const DetectorConfig& det_cfg, const SSLConfig& cfg,
                  const TrainConfig& tcfg,
                  const std::function<void(const MetricsRecord&)>& on_record = nullptr);

}  // namespace diffdet::ssl
