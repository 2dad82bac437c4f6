#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diffdet/rng.hpp"

namespace diffdet::diffusion {

using Mat = Eigen::MatrixXd;

enum class ScheduleKind { kCosine, kLinear };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

/// Variance schedule: betas[t], alphas[t] = 1 - betas[t], and the running
/// product alpha_cumprod[t].
struct DiffusionSchedule {
  int max_t = 0;
  Eigen::VectorXd betas;
  Eigen::VectorXd alphas;
  Eigen::VectorXd alpha_cumprod;
};

/// Per-batch noisy sizes/labels in scaled signal space at a single timestep.
struct DiffusionState {
  Mat sizes_t;   // N_Q x 3
  Mat labels_t;  // N_Q x N_cls
  int timestep = 0;
};

/// Gaussian prior the teacher samples from at t = T-1 and that box renewal
/// redraws from. Means are expressed in decoded [0,1] space and converted by
/// signal_scale at draw time.
struct NoisePrior {
  double size_mean01 = 0.25;
  double label_mean01 = 1.0 / 6.0;
  double size_scale = 2.0;
  double label_scale = 2.0;
};

DiffusionSchedule make_schedule(int max_t, ScheduleKind kind = ScheduleKind::kCosine);

/// (2x - 1) * scale; inputs expected in [0,1].
Mat signal_scale(const Mat& x, double scale);
double signal_scale(double x, double scale);

/// Inverse of signal_scale followed by a clamp to [0,1].
Mat signal_unscale(const Mat& z, double scale);
double signal_unscale(double z, double scale);

/// Forward diffusion z_t = sqrt(acp_t) z0 + sqrt(1-acp_t) eps, clamped to
/// [-clamp_abs, clamp_abs] (clamp_abs <= 0 disables the clamp).
Mat corrupt(const Mat& z0, int t, const Mat& eps, const DiffusionSchedule& schedule,
            double clamp_abs);

/// Deterministic-when-eta=0 reverse update from t_cur to t_next; t_next = -1
/// means fully denoised (acp = 1). Result clamped like corrupt.
Mat ddim_step(const Mat& z_t, const Mat& z0_pred, int t_cur, int t_next,
              const DiffusionSchedule& schedule, double eta, double clamp_abs,
              Rng* rng = nullptr);

/// `steps` (t_cur, t_next) pairs spanning max_t-1 down to -1, uniformly spaced
/// with floor rounding: steps=2, max_t=1000 -> [(999,499),(499,-1)].
std::vector<std::pair<int, int>> ddim_time_pairs(int steps, int max_t);

DiffusionState sample_noise_prior_state(int n_queries, int n_classes, const NoisePrior& prior,
                                        Rng& rng);

/// Rows whose objectness falls below threshold are redrawn from the prior.
DiffusionState box_renewal(const DiffusionState& state, const Eigen::VectorXd& objectness,
                           double threshold, const NoisePrior& prior, Rng& rng);

}  // namespace diffdet::diffusion
