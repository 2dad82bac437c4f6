#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "diffdet/agent_queries.hpp"
#include "diffdet/pointops.hpp"
#include "diffdet/rng.hpp"

using namespace diffdet;
using namespace diffdet::agent_queries;
using ad::Mat;
using ad::Var;

namespace {
Mat randmat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}
}  // namespace

TEST_CASE("default grid resolution yields 1024 agents") {
  AgentGridConfig cfg;  // (16,16,4)
  CHECK(cfg.n_agents() == 1024);
  Mat pos = lattice_positions(cfg.resolution);
  CHECK(pos.rows() == 1024);
  CHECK(pos.minCoeff() > 0.0);
  CHECK(pos.maxCoeff() < 1.0);
}

TEST_CASE("zeroed learned variables and zeroed MLP produce all-zero agents") {
  AgentGridConfig cfg;
  cfg.resolution = {2, 2, 2};
  cfg.feat_dim = 4;
  cfg.pos_hidden = 4;
  Rng rng(1);
  ad::ParamStore ps;
  init_params(ps, "ag", cfg, rng);
  ps.at("ag.learned").value.setZero();
  ps.at("ag.pos.W1").value.setZero();
  ps.at("ag.pos.W2").value.setZero();
  ad::Tape t(false);
  Var g0 = initial_agents(t, ps, "ag", cfg);
  CHECK(g0.val().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("1x1x1 grid degenerates to a single agent at the cell center") {
  Mat pos = lattice_positions({1, 1, 1});
  REQUIRE(pos.rows() == 1);
  CHECK(pos(0, 0) == 0.5);
  CHECK(pos(0, 1) == 0.5);
  CHECK(pos(0, 2) == 0.5);
}

TEST_CASE("adaptor over a single feature row returns exactly that row") {
  AgentGridConfig cfg;
  cfg.resolution = {2, 2, 1};
  cfg.feat_dim = 5;
  cfg.pos_hidden = 4;
  Rng rng(2);
  ad::ParamStore ps;
  init_params(ps, "ag", cfg, rng);
  ad::Tape t(false);
  Var g0 = initial_agents(t, ps, "ag", cfg);
  Mat v = randmat(1, 5, rng);
  Var adapted = adapt_agents(t, ps, "ag", cfg, g0, ad::constant(t, v));
  // residual form: adapted - g0 == v on every row
  Mat delta = adapted.val() - g0.val();
  for (Eigen::Index i = 0; i < delta.rows(); ++i)
    CHECK((delta.row(i) - v.row(0)).cwiseAbs().maxCoeff() < 1e-12);

  // duplicated key/value rows share the softmax mass: same output
  Mat v2(2, 5);
  v2 << v, v;
  ad::Tape t2(false);
  Var g0b = initial_agents(t2, ps, "ag", cfg);
  Var adapted2 = adapt_agents(t2, ps, "ag", cfg, g0b, ad::constant(t2, v2));
  CHECK((adapted2.val() - adapted.val()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adaptor matches an explicit softmax-weighted-sum oracle") {
  AgentGridConfig cfg;
  cfg.resolution = {2, 2, 2};
  cfg.feat_dim = 6;
  cfg.pos_hidden = 4;
  Rng rng(3);
  ad::ParamStore ps;
  init_params(ps, "ag", cfg, rng);
  Mat feats = randmat(5, 6, rng);
  ad::Tape t(false);
  Var g0 = initial_agents(t, ps, "ag", cfg);
  Mat attn;
  Var adapted = adapt_agents(t, ps, "ag", cfg, g0, ad::constant(t, feats), &attn);

  const Mat& wq = ps.at("ag.adaptor.Wq").value;
  const Mat& wk = ps.at("ag.adaptor.Wk").value;
  for (Eigen::Index i = 0; i < 8; ++i) {
    Eigen::RowVectorXd q = g0.val().row(i) * wq;
    Eigen::VectorXd logits(5);
    for (Eigen::Index k = 0; k < 5; ++k)
      logits(k) = q.dot(feats.row(k) * wk) / std::sqrt(6.0);
    Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
    e /= e.sum();
    CHECK(std::abs(e.sum() - 1.0) < 1e-12);
    Eigen::RowVectorXd expect = g0.val().row(i);
    for (Eigen::Index k = 0; k < 5; ++k) expect += e(k) * feats.row(k);
    CHECK((adapted.val().row(i) - expect).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(attn.row(i).sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("different scenes produce different adapted agents") {
  AgentGridConfig cfg;
  cfg.resolution = {2, 2, 1};
  cfg.feat_dim = 4;
  cfg.pos_hidden = 4;
  Rng rng(4);
  ad::ParamStore ps;
  init_params(ps, "ag", cfg, rng);
  ad::Tape t(false);
  Var g0 = initial_agents(t, ps, "ag", cfg);
  Var a = adapt_agents(t, ps, "ag", cfg, g0, ad::constant(t, randmat(6, 4, rng)));
  Var b = adapt_agents(t, ps, "ag", cfg, g0, ad::constant(t, randmat(6, 4, rng)));
  CHECK((a.val() - b.val()).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("queries at a grid node's scene-space location equal the node embedding") {
  std::array<int, 3> res{4, 4, 2};
  Rng rng(5);
  Mat adapted = randmat(32, 3, rng);
  SceneBounds bounds;
  bounds.lo = {-3.0, -3.0, 0.0};
  bounds.hi = {3.0, 3.0, 3.0};
  // node (i,j,k) cell-center normalized position -> scene space
  int i = 2, j = 1, k = 0;
  Eigen::Vector3d u((i + 0.5) / 4.0, (j + 0.5) / 4.0, (k + 0.5) / 2.0);
  Mat centers(1, 3);
  centers.row(0) = (bounds.lo.array() + u.array() * (bounds.hi - bounds.lo).array()).transpose();
  ad::Tape t(false);
  ObjectQuerySet qs = generate_queries(t, ad::constant(t, adapted), res, centers, bounds);
  Eigen::Index flat = (i * 4 + j) * 2 + k;
  CHECK((qs.embeddings.val().row(0) - adapted.row(flat)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("128 centers produce a 128 x C query set") {
  std::array<int, 3> res{16, 16, 4};
  Rng rng(6);
  Mat adapted = randmat(1024, 8, rng);
  SceneBounds bounds;
  bounds.lo = {-3, -3, 0};
  bounds.hi = {3, 3, 3};
  Mat centers(128, 3);
  for (int i = 0; i < 128; ++i)
    centers.row(i) << rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 3);
  ad::Tape t(false);
  ObjectQuerySet qs = generate_queries(t, ad::constant(t, adapted), res, centers, bounds);
  CHECK(qs.embeddings.rows() == 128);
  CHECK(qs.embeddings.cols() == 8);
  CHECK(qs.centers.rows() == 128);
}

TEST_CASE("query interpolation matches the 8-corner weighted-sum oracle") {
  std::array<int, 3> res{3, 4, 2};
  Rng rng(7);
  Mat adapted = randmat(24, 5, rng);
  SceneBounds bounds;
  bounds.lo = {-1, -2, 0};
  bounds.hi = {5, 2, 4};
  for (int trial = 0; trial < 40; ++trial) {
    Mat c(1, 3);
    for (int a = 0; a < 3; ++a)
      c(0, a) = rng.uniform(bounds.lo(a), bounds.hi(a));
    ad::Tape t(false);
    ObjectQuerySet qs = generate_queries(t, ad::constant(t, adapted), res, c, bounds);

    Eigen::Vector3d u = bounds.normalize(c.row(0).transpose());
    Eigen::Vector3d idx;
    for (int a = 0; a < 3; ++a)
      idx(a) = std::clamp(u(a) * res[a] - 0.5, 0.0, double(res[a] - 1));
    auto st = pointops::trilinear_stencil(res, idx);
    Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(5);
    double wsum = 0;
    for (int q = 0; q < 8; ++q) {
      expect += st.weights[q] * adapted.row(st.indices[q]);
      wsum += st.weights[q];
    }
    CHECK(std::abs(wsum - 1.0) < 1e-12);
    CHECK((qs.embeddings.val().row(0) - expect).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("degenerate bounds axis maps to coordinate 0.5") {
  SceneBounds b;
  b.lo = {0, 0, 2.0};
  b.hi = {1, 1, 2.0};  // flat in z
  Eigen::Vector3d u = b.normalize({0.5, 0.25, 2.0});
  CHECK(u(2) == 0.5);
}

TEST_CASE("learned agent variables receive gradients through attention + interpolation") {
  AgentGridConfig cfg;
  cfg.resolution = {2, 2, 1};
  cfg.feat_dim = 4;
  cfg.pos_hidden = 4;
  Rng rng(8);
  ad::ParamStore ps;
  init_params(ps, "ag", cfg, rng);
  Mat feats = randmat(3, 4, rng);
  SceneBounds bounds;
  bounds.lo = {-1, -1, 0};
  bounds.hi = {1, 1, 1};
  Mat centers(2, 3);
  centers << 0.2, -0.3, 0.5, -0.6, 0.4, 0.2;
  Mat w = randmat(2, 4, rng);

  auto loss_value = [&]() {
    ad::Tape t(false);
    Var g0 = initial_agents(t, ps, "ag", cfg);
    Var adapted = adapt_agents(t, ps, "ag", cfg, g0, ad::constant(t, feats));
    ObjectQuerySet qs = generate_queries(t, adapted, cfg.resolution, centers, bounds);
    return (qs.embeddings.val().cwiseProduct(w)).sum();
  };
  {
    ad::Tape t;
    Var g0 = initial_agents(t, ps, "ag", cfg);
    Var adapted = adapt_agents(t, ps, "ag", cfg, g0, ad::constant(t, feats));
    ObjectQuerySet qs = generate_queries(t, adapted, cfg.resolution, centers, bounds);
    Var loss = ad::reduce_sum(ad::cwise_mul_const(qs.embeddings, w));
    t.backward(loss.node());
  }
  ad::Param& lv = ps.at("ag.learned");
  CHECK(lv.grad.cwiseAbs().maxCoeff() > 1e-8);

  const double h = 1e-5;
  Rng pick(9);
  for (int rep = 0; rep < 8; ++rep) {
    Eigen::Index i = pick.integer(lv.value.rows());
    Eigen::Index j = pick.integer(lv.value.cols());
    double keep = lv.value(i, j);
    lv.value(i, j) = keep + h;
    double up = loss_value();
    lv.value(i, j) = keep - h;
    double dn = loss_value();
    lv.value(i, j) = keep;
    double fd = (up - dn) / (2 * h);
    double an = lv.grad(i, j);
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-3);
  }
}
