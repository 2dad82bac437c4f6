#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "diffdet/autodiff.hpp"
#include "diffdet/params.hpp"
#include "diffdet/pointops.hpp"

namespace diffdet::backbone {

using ad::Mat;
using ad::Var;

/// Downsampled cloud with per-point features.
struct FeatureCloud {
  Mat coords;    // m x 3, meters
  Mat features;  // m x C
};

struct LevelSpec {
  int centroids = 256;
  double radius = 0.8;
  int max_neighbors = 16;
  std::vector<int> widths = {32, 64};  // per-point MLP layer widths
};

struct BackboneConfig {
  std::vector<LevelSpec> levels;
  int feat_dim = 64;  // C; output width of the last two levels
  std::uint64_t fps_seed = 1;

  void validate() const;
};

/// Registers all per-level MLP parameters under "<prefix>.l<i>.m<j>.{W,b}".
void init_params(ad::ParamStore& store, const std::string& prefix, const BackboneConfig& cfg,
                 Rng& rng);

/// Encoder output: the last level (consumed by the decoder) and the
/// penultimate level (the agent adaptor's keys/values).
struct EncodeResult {
  Mat final_coords;
  Var final_feats;
  Mat inter_coords;
  Var inter_feats;

  FeatureCloud final_cloud() const { return {final_coords, final_feats.val()}; }
  FeatureCloud inter_cloud() const { return {inter_coords, inter_feats.val()}; }
};

/// Set-abstraction cascade: FPS centroids -> radius grouping (neighbor list
/// capped, padded by repeating the nearest) -> shared MLP on centroid-relative
/// offsets (+ previous features) -> max-pool per group.
EncodeResult encode(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                    const BackboneConfig& cfg, const Mat& points);

}  // namespace diffdet::backbone
