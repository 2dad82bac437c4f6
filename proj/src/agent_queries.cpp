#include "diffdet/agent_queries.hpp"

#include <cmath>
#include <stdexcept>

#include "diffdet/pointops.hpp"

namespace diffdet::agent_queries {

SceneBounds SceneBounds::from_points(const Mat& points, double expand_frac) {
  if (points.rows() < 1) throw std::invalid_argument("SceneBounds: empty cloud");
  SceneBounds b;
  b.lo = points.colwise().minCoeff().transpose();
  b.hi = points.colwise().maxCoeff().transpose();
  Eigen::Vector3d pad = (b.hi - b.lo) * expand_frac;
  b.lo -= pad;
  b.hi += pad;
  return b;
}

Eigen::Vector3d SceneBounds::normalize(const Eigen::Vector3d& p) const {
  Eigen::Vector3d u;
  for (int a = 0; a < 3; ++a) {
    double ext = hi(a) - lo(a);
    u(a) = ext > 0.0 ? (p(a) - lo(a)) / ext : 0.5;
  }
  return u;
}

Mat lattice_positions(const std::array<int, 3>& resolution) {
  for (int a = 0; a < 3; ++a)
    if (resolution[a] < 1) throw std::invalid_argument("lattice: resolution must be >= 1");
  int n = resolution[0] * resolution[1] * resolution[2];
  Mat pos(n, 3);
  int r = 0;
  for (int i = 0; i < resolution[0]; ++i)
    for (int j = 0; j < resolution[1]; ++j)
      for (int k = 0; k < resolution[2]; ++k) {
        pos(r, 0) = (i + 0.5) / resolution[0];
        pos(r, 1) = (j + 0.5) / resolution[1];
        pos(r, 2) = (k + 0.5) / resolution[2];
        ++r;
      }
  return pos;
}

void init_params(ad::ParamStore& store, const std::string& prefix, const AgentGridConfig& cfg,
                 Rng& rng) {
  int ng = cfg.n_agents(), c = cfg.feat_dim, h = cfg.pos_hidden;
  store.add(prefix + ".learned", ad::gaussian(ng, c, cfg.init_std, rng));
  store.add(prefix + ".pos.W1", ad::xavier_uniform(3, h, rng));
  store.add(prefix + ".pos.b1", Mat::Zero(1, h));
  store.add(prefix + ".pos.W2", ad::xavier_uniform(h, c, rng));
  store.add(prefix + ".pos.b2", Mat::Zero(1, c));
  store.add(prefix + ".adaptor.Wq", ad::xavier_uniform(c, c, rng));
  store.add(prefix + ".adaptor.Wk", ad::xavier_uniform(c, c, rng));
}

Var initial_agents(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                   const AgentGridConfig& cfg) {
  Var pos = ad::constant(tape, lattice_positions(cfg.resolution));
  Var h = ad::relu(ad::add_rowvec(ad::matmul(pos, ad::leaf(tape, store.at(prefix + ".pos.W1"))),
                                  ad::leaf(tape, store.at(prefix + ".pos.b1"))));
  Var enc = ad::add_rowvec(ad::matmul(h, ad::leaf(tape, store.at(prefix + ".pos.W2"))),
                           ad::leaf(tape, store.at(prefix + ".pos.b2")));
  return ad::add(ad::leaf(tape, store.at(prefix + ".learned")), enc);
}

Var adapt_agents(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                 const AgentGridConfig& cfg, Var g0, Var scene_feats, Mat* attn_out) {
  if (scene_feats.rows() < 1) throw std::invalid_argument("adapt_agents: empty scene features");
  if (scene_feats.cols() != cfg.feat_dim)
    throw std::invalid_argument("adapt_agents: scene feature width must equal feat_dim");
  Var q = ad::matmul(g0, ad::leaf(tape, store.at(prefix + ".adaptor.Wq")));
  Var k = ad::matmul(scene_feats, ad::leaf(tape, store.at(prefix + ".adaptor.Wk")));
  Var logits = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(double(cfg.feat_dim)));
  Var attn = ad::softmax_rows(logits);
  if (attn_out) *attn_out = attn.val();
  return ad::add(g0, ad::matmul(attn, scene_feats));
}

ObjectQuerySet generate_queries(ad::Tape& tape, Var adapted,
                                const std::array<int, 3>& resolution, const Mat& centers,
                                const SceneBounds& bounds) {
  (void)tape;
  if (centers.cols() != 3) throw std::invalid_argument("generate_queries: centers must be n x 3");
  std::vector<std::array<Eigen::Index, 8>> idxs(centers.rows());
  std::vector<std::array<double, 8>> ws(centers.rows());
  for (Eigen::Index i = 0; i < centers.rows(); ++i) {
    Eigen::Vector3d u = bounds.normalize(centers.row(i).transpose());
    Eigen::Vector3d ic;
    for (int a = 0; a < 3; ++a) {
      double x = u(a) * resolution[a] - 0.5;  // cell-center lattice -> index space
      ic(a) = std::clamp(x, 0.0, static_cast<double>(resolution[a] - 1));
    }
    pointops::TrilinearStencil st = pointops::trilinear_stencil(resolution, ic);
    idxs[i] = st.indices;
    ws[i] = st.weights;
  }
  ObjectQuerySet out;
  out.embeddings = ad::weighted_gather_rows(adapted, std::move(idxs), std::move(ws));
  out.centers = centers;
  return out;
}

}  // namespace diffdet::agent_queries
