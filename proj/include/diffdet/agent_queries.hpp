#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>

#include "diffdet/autodiff.hpp"
#include "diffdet/params.hpp"

namespace diffdet::agent_queries {

using ad::Mat;
using ad::Var;

/// Axis-aligned bounds used to normalize scene coordinates into [0,1]^3.
struct SceneBounds {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Ones();

  static SceneBounds from_points(const Mat& points, double expand_frac = 0.01);
  double diagonal() const { return (hi - lo).norm(); }
  /// Degenerate axes (zero extent) map to 0.5.
  Eigen::Vector3d normalize(const Eigen::Vector3d& p) const;
};

struct AgentGridConfig {
  std::array<int, 3> resolution{16, 16, 4};
  int feat_dim = 64;
  int pos_hidden = 64;        // hidden width of the two-layer position MLP
  double init_std = 0.02;     // learned-variable init

  int n_agents() const { return resolution[0] * resolution[1] * resolution[2]; }
};

/// Cell-center lattice over [0,1]^3, x-major flat order; resolution (1,1,1)
/// degenerates to the single position (0.5, 0.5, 0.5).
Mat lattice_positions(const std::array<int, 3>& resolution);

/// Registers learned variables, position MLP and adaptor projections under
/// "<prefix>.{learned, pos.*, adaptor.*}".
void init_params(ad::ParamStore& store, const std::string& prefix, const AgentGridConfig& cfg,
                 Rng& rng);

/// G_0 = learned_vars + posMLP(lattice position), N_G x C.
Var initial_agents(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                   const AgentGridConfig& cfg);

/// Single attention layer over scene features with residual from g0:
/// Ghat = g0 + softmax((g0 Wq)(F Wk)^T / sqrt(C)) F. Scene features are the
/// attention values unprojected, so their width must equal C.
/// attn_out, when given, receives the row-stochastic attention matrix.
Var adapt_agents(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                 const AgentGridConfig& cfg, Var g0, Var scene_feats, Mat* attn_out = nullptr);

struct ObjectQuerySet {
  Var embeddings;  // N_Q x C
  Mat centers;     // N_Q x 3, meters
};

/// Normalizes centers via bounds, then trilinearly interpolates the adapted
/// agent grid at the cell-center lattice (boundary cells extend to the hull).
ObjectQuerySet generate_queries(ad::Tape& tape, Var adapted,
                                const std::array<int, 3>& resolution, const Mat& centers,
                                const SceneBounds& bounds);

}  // namespace diffdet::agent_queries
