#include "diffdet/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffdet::diffusion {

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::kCosine;
  if (s == "linear") return ScheduleKind::kLinear;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::kCosine ? "cosine" : "linear";
}

DiffusionSchedule make_schedule(int max_t, ScheduleKind kind) {
  if (max_t < 1) throw std::invalid_argument("make_schedule: max_t must be >= 1");
  DiffusionSchedule s;
  s.max_t = max_t;
  s.betas.resize(max_t);
  if (kind == ScheduleKind::kCosine) {
    // Squared-cosine alpha_cumprod ramp; betas derived from consecutive ratios
    // and capped at 0.999 so every alpha stays positive.
    const double cs = 0.008;
    auto f = [&](double t) {
      double a = (t / max_t + cs) / (1.0 + cs) * std::numbers::pi / 2.0;
      double c = std::cos(a);
      return c * c;
    };
    double f0 = f(0.0);
    for (int t = 0; t < max_t; ++t) {
      double beta = 1.0 - f(t + 1.0) / f(static_cast<double>(t));
      s.betas(t) = std::min(std::max(beta, 1e-8), 0.999);
    }
    (void)f0;
  } else {
    const double b0 = 1e-4, b1 = 2e-2;
    for (int t = 0; t < max_t; ++t) {
      double u = max_t == 1 ? 0.0 : static_cast<double>(t) / (max_t - 1);
      s.betas(t) = b0 + (b1 - b0) * u;
    }
  }
  s.alphas = 1.0 - s.betas.array();
  s.alpha_cumprod.resize(max_t);
  double acc = 1.0;
  for (int t = 0; t < max_t; ++t) {
    acc *= s.alphas(t);
    s.alpha_cumprod(t) = acc;
  }
  return s;
}

double signal_scale(double x, double scale) {
  if (scale <= 0.0) throw std::invalid_argument("signal_scale: scale must be positive");
  return (2.0 * x - 1.0) * scale;
}

Mat signal_scale(const Mat& x, double scale) {
  if (scale <= 0.0) throw std::invalid_argument("signal_scale: scale must be positive");
  return ((2.0 * x.array() - 1.0) * scale).matrix();
}

double signal_unscale(double z, double scale) {
  if (scale <= 0.0) throw std::invalid_argument("signal_unscale: scale must be positive");
  double x = (z / scale + 1.0) / 2.0;
  return std::min(std::max(x, 0.0), 1.0);
}

Mat signal_unscale(const Mat& z, double scale) {
  if (scale <= 0.0) throw std::invalid_argument("signal_unscale: scale must be positive");
  return ((z.array() / scale + 1.0) / 2.0).cwiseMax(0.0).cwiseMin(1.0).matrix();
}

namespace {
Mat clamp_abs_mat(Mat m, double clamp_abs) {
  if (clamp_abs > 0.0) return m.cwiseMax(-clamp_abs).cwiseMin(clamp_abs);
  return m;
}
}  // namespace

Mat corrupt(const Mat& z0, int t, const Mat& eps, const DiffusionSchedule& schedule,
            double clamp_abs) {
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols())
    throw std::invalid_argument("corrupt: z0/eps shape mismatch");
  if (t < 0 || t >= schedule.max_t) throw std::invalid_argument("corrupt: t out of range");
  double acp = schedule.alpha_cumprod(t);
  Mat z = std::sqrt(acp) * z0 + std::sqrt(1.0 - acp) * eps;
  return clamp_abs_mat(std::move(z), clamp_abs);
}

Mat ddim_step(const Mat& z_t, const Mat& z0_pred, int t_cur, int t_next,
              const DiffusionSchedule& schedule, double eta, double clamp_abs, Rng* rng) {
  if (t_next >= t_cur) throw std::invalid_argument("ddim_step: t_next must be < t_cur");
  if (t_cur < 0 || t_cur >= schedule.max_t)
    throw std::invalid_argument("ddim_step: t_cur out of range");
  if (t_next < -1) throw std::invalid_argument("ddim_step: t_next must be >= -1");
  if (eta < 0.0) throw std::invalid_argument("ddim_step: eta must be >= 0");
  if (z_t.rows() != z0_pred.rows() || z_t.cols() != z0_pred.cols())
    throw std::invalid_argument("ddim_step: shape mismatch");

  double acp_cur = schedule.alpha_cumprod(t_cur);
  double acp_next = t_next < 0 ? 1.0 : schedule.alpha_cumprod(t_next);
  Mat eps_hat = (z_t - std::sqrt(acp_cur) * z0_pred) / std::sqrt(1.0 - acp_cur);
  double sigma = eta * std::sqrt((1.0 - acp_next) / (1.0 - acp_cur)) *
                 std::sqrt(1.0 - acp_cur / acp_next);
  double dir = std::sqrt(std::max(0.0, 1.0 - acp_next - sigma * sigma));
  Mat z = std::sqrt(acp_next) * z0_pred + dir * eps_hat;
  if (sigma > 0.0) {
    if (!rng) throw std::invalid_argument("ddim_step: eta > 0 requires an rng");
    Mat xi(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < xi.rows(); ++i)
      for (Eigen::Index j = 0; j < xi.cols(); ++j) xi(i, j) = rng->normal();
    z += sigma * xi;
  }
  return clamp_abs_mat(std::move(z), clamp_abs);
}

std::vector<std::pair<int, int>> ddim_time_pairs(int steps, int max_t) {
  if (steps < 1) throw std::invalid_argument("ddim_time_pairs: steps must be >= 1");
  if (max_t < 1) throw std::invalid_argument("ddim_time_pairs: max_t must be >= 1");
  // linspace from -1 to max_t-1 with steps+1 entries, floored to integers,
  // reversed, then paired adjacently.
  std::vector<int> times(steps + 1);
  for (int j = 0; j <= steps; ++j) {
    double v = -1.0 + (static_cast<double>(max_t - 1) - (-1.0)) * j / steps;
    times[j] = static_cast<int>(std::floor(v));
  }
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(steps);
  for (int j = steps; j >= 1; --j) pairs.emplace_back(times[j], times[j - 1]);
  return pairs;
}

DiffusionState sample_noise_prior_state(int n_queries, int n_classes, const NoisePrior& prior,
                                        Rng& rng) {
  DiffusionState st;
  double size_mu = signal_scale(prior.size_mean01, prior.size_scale);
  double label_mu = signal_scale(prior.label_mean01, prior.label_scale);
  st.sizes_t.resize(n_queries, 3);
  for (Eigen::Index i = 0; i < st.sizes_t.rows(); ++i)
    for (Eigen::Index j = 0; j < 3; ++j) st.sizes_t(i, j) = rng.normal(size_mu, 1.0);
  st.labels_t.resize(n_queries, n_classes);
  for (Eigen::Index i = 0; i < st.labels_t.rows(); ++i)
    for (Eigen::Index j = 0; j < n_classes; ++j) st.labels_t(i, j) = rng.normal(label_mu, 1.0);
  st.sizes_t = st.sizes_t.cwiseMax(-prior.size_scale).cwiseMin(prior.size_scale);
  st.labels_t = st.labels_t.cwiseMax(-prior.label_scale).cwiseMin(prior.label_scale);
  return st;
}

DiffusionState box_renewal(const DiffusionState& state, const Eigen::VectorXd& objectness,
                           double threshold, const NoisePrior& prior, Rng& rng) {
  if (objectness.size() != state.sizes_t.rows())
    throw std::invalid_argument("box_renewal: objectness size mismatch");
  DiffusionState out = state;
  double size_mu = signal_scale(prior.size_mean01, prior.size_scale);
  double label_mu = signal_scale(prior.label_mean01, prior.label_scale);
  for (Eigen::Index i = 0; i < objectness.size(); ++i) {
    if (objectness(i) >= threshold) continue;
    for (Eigen::Index j = 0; j < out.sizes_t.cols(); ++j)
      out.sizes_t(i, j) = std::clamp(rng.normal(size_mu, 1.0), -prior.size_scale,
                                     prior.size_scale);
    for (Eigen::Index j = 0; j < out.labels_t.cols(); ++j)
      out.labels_t(i, j) = std::clamp(rng.normal(label_mu, 1.0), -prior.label_scale,
                                      prior.label_scale);
  }
  return out;
}

}  // namespace diffdet::diffusion
