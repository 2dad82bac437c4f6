#include "diffdet/detector.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace diffdet::detector {

void DetectorConfig::validate() const {
  backbone.validate();
  decoder.validate();
  if (agents.feat_dim != backbone.feat_dim || decoder.feat_dim != backbone.feat_dim)
    throw std::invalid_argument("detector: feat_dim mismatch across modules");
  if (n_queries < 1) throw std::invalid_argument("detector: n_queries must be >= 1");
  if (n_queries > backbone.levels.back().centroids)
    throw std::invalid_argument("detector: n_queries exceeds final point count");
}

void init_params(ad::ParamStore& store, const std::string& prefix, const DetectorConfig& cfg,
                 Rng& rng) {
  cfg.validate();
  Rng rb = rng.fork("backbone");
  Rng ra = rng.fork("agents");
  Rng rd = rng.fork("decoder");
  backbone::init_params(store, prefix + ".bb", cfg.backbone, rb);
  agent_queries::init_params(store, prefix + ".ag", cfg.agents, ra);
  decoder::init_params(store, prefix + ".dec", cfg.decoder, rd);
}

ad::ParamStore make_param_store(const DetectorConfig& cfg, std::uint64_t seed,
                                const std::string& prefix) {
  ad::ParamStore store;
  Rng rng(seed);
  init_params(store, prefix, cfg, rng);
  return store;
}

SceneForward scene_forward(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                           const DetectorConfig& cfg, const Mat& points) {
  SceneForward sf;
  sf.bounds = agent_queries::SceneBounds::from_points(points);
  sf.enc = backbone::encode(tape, store, prefix + ".bb", cfg.backbone, points);

  Var g0 = agent_queries::initial_agents(tape, store, prefix + ".ag", cfg.agents);
  Var adapted = agent_queries::adapt_agents(tape, store, prefix + ".ag", cfg.agents, g0,
                                            sf.enc.inter_feats);

  std::vector<Eigen::Index> idx =
      pointops::fps(sf.enc.final_coords, cfg.n_queries, cfg.center_fps_seed);
  sf.centers.resize(cfg.n_queries, 3);
  for (int i = 0; i < cfg.n_queries; ++i) sf.centers.row(i) = sf.enc.final_coords.row(idx[i]);

  auto qs = agent_queries::generate_queries(tape, adapted, cfg.agents.resolution, sf.centers,
                                            sf.bounds);
  sf.queries = qs.embeddings;
  return sf;
}

decoder::NoisyBoxes decode_noisy_boxes(const diffusion::DiffusionState& state,
                                       const Mat& centers,
                                       const agent_queries::SceneBounds& bounds,
                                       double size_scale, double label_scale,
                                       double min_size) {
  decoder::NoisyBoxes nb;
  nb.centers = centers;
  Mat sizes01 = diffusion::signal_unscale(state.sizes_t, size_scale);
  Eigen::RowVector3d ext = (bounds.hi - bounds.lo).transpose();
  nb.sizes = (sizes01.array().rowwise() * ext.array()).cwiseMax(min_size).matrix();
  nb.labels01 = diffusion::signal_unscale(state.labels_t, label_scale);
  return nb;
}

diffusion::DiffusionState encode_prediction(const decoder::DetectorOutput& pred, int timestep,
                                            const agent_queries::SceneBounds& bounds,
                                            double size_scale, double label_scale) {
  diffusion::DiffusionState st;
  st.timestep = timestep;
  Eigen::RowVector3d ext = (bounds.hi - bounds.lo).transpose();
  Mat sizes01 = (pred.size.array().rowwise() / ext.array().max(1e-9))
                    .cwiseMax(0.0)
                    .cwiseMin(1.0)
                    .matrix();
  st.sizes_t = diffusion::signal_scale(sizes01, size_scale);
  Mat probs = pred.cls_logits;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double m = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - m).exp();
    probs.row(i) /= probs.row(i).sum();
  }
  st.labels_t = diffusion::signal_scale(probs, label_scale);
  return st;
}

std::vector<ScoredBox> to_scored_boxes(const decoder::DetectorOutput& out) {
  std::vector<ScoredBox> boxes;
  boxes.reserve(out.center.rows());
  for (Eigen::Index i = 0; i < out.center.rows(); ++i) {
    ScoredBox sb;
    sb.box.center = out.center.row(i).transpose();
    sb.box.size = out.size.row(i).transpose();
    sb.box.yaw = 0.0;
    Eigen::Index best = 0;
    out.cls_logits.row(i).maxCoeff(&best);
    sb.box.label = static_cast<int>(best);
    double m = out.cls_logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (out.cls_logits.row(i).array() - m).exp();
    sb.class_conf = e(best) / e.sum();
    sb.objectness = out.objectness(i);
    sb.iou_est = out.iou_est(i);
    sb.score = sb.objectness * sb.class_conf;
    boxes.push_back(sb);
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Checkpoint IO (little-endian, version tag "D3CK0001")
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'D', '3', 'C', 'K', '0', '0', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
void write_store(std::ostream& os, const ad::ParamStore& ps) {
  write_u64(os, ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const ad::Param& p = ps[i];
    write_string(os, p.name);
    write_u64(os, static_cast<std::uint64_t>(p.value.rows()));
    write_u64(os, static_cast<std::uint64_t>(p.value.cols()));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(sizeof(double) * p.value.size()));
  }
}
ad::ParamStore read_store(std::istream& is) {
  ad::ParamStore ps;
  std::uint64_t n = read_u64(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_string(is);
    Eigen::Index r = static_cast<Eigen::Index>(read_u64(is));
    Eigen::Index c = static_cast<Eigen::Index>(read_u64(is));
    Mat m(r, c);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    ps.add(name, std::move(m));
  }
  return ps;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_string(os, ckpt.config_hash);
  write_u64(os, static_cast<std::uint64_t>(ckpt.iteration));
  write_store(os, ckpt.teacher);
  write_store(os, ckpt.student);
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  Checkpoint c;
  c.config_hash = read_string(is);
  c.iteration = static_cast<long long>(read_u64(is));
  c.teacher = read_store(is);
  c.student = read_store(is);
  if (!is) throw std::runtime_error("checkpoint read failed: " + path);
  return c;
}

}  // namespace diffdet::detector
