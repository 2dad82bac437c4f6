#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "diffdet/agent_queries.hpp"
#include "diffdet/backbone.hpp"
#include "diffdet/decoder.hpp"
#include "diffdet/diffusion.hpp"
#include "diffdet/params.hpp"
#include "diffdet/pointops.hpp"

namespace diffdet::detector {

using ad::Mat;
using ad::Var;

/// Whole-detector configuration: encoder, agent grid, decoder, query count.
struct DetectorConfig {
  backbone::BackboneConfig backbone;
  agent_queries::AgentGridConfig agents;
  decoder::DecoderConfig decoder;
  int n_queries = 128;
  std::uint64_t center_fps_seed = 99;

  void validate() const;
};

/// Registers every parameter of one detector under `prefix`.
void init_params(ad::ParamStore& store, const std::string& prefix, const DetectorConfig& cfg,
                 Rng& rng);

ad::ParamStore make_param_store(const DetectorConfig& cfg, std::uint64_t seed,
                                const std::string& prefix = "det");

/// Scene-dependent state shared by every decode pass: encoded features,
/// adapted agents, FPS noisy centers and the interpolated queries.
struct SceneForward {
  agent_queries::SceneBounds bounds;
  backbone::EncodeResult enc;
  Mat centers;  // N_Q x 3
  Var queries;  // N_Q x C
};

SceneForward scene_forward(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                           const DetectorConfig& cfg, const Mat& points);

/// Decodes a diffusion state into NoisyBoxes: sizes unscaled to [0,1] then
/// mapped to scene units per axis (floored at min_size), labels unscaled.
decoder::NoisyBoxes decode_noisy_boxes(const diffusion::DiffusionState& state,
                                       const Mat& centers,
                                       const agent_queries::SceneBounds& bounds,
                                       double size_scale, double label_scale,
                                       double min_size = 1e-3);

/// Re-encodes predictions as the clean-signal estimate for the DDIM update
/// (sizes normalized by scene extent, labels as softmax class probabilities),
/// both mapped through signal_scale.
diffusion::DiffusionState encode_prediction(const decoder::DetectorOutput& pred, int timestep,
                                            const agent_queries::SceneBounds& bounds,
                                            double size_scale, double label_scale);

/// One prediction as a scored box record (label = argmax class).
struct ScoredBox {
  BoundingBox3D box;
  double score = 0.0;       // objectness * class confidence
  double objectness = 0.0;
  double class_conf = 0.0;  // max softmax probability
  double iou_est = 0.0;
};

std::vector<ScoredBox> to_scored_boxes(const decoder::DetectorOutput& out);

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary with config hash and both parameter stores.
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::string config_hash;
  long long iteration = 0;
  ad::ParamStore teacher;
  ad::ParamStore student;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace diffdet::detector
