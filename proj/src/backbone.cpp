#include "diffdet/backbone.hpp"

#include <algorithm>
#include <stdexcept>

namespace diffdet::backbone {

void BackboneConfig::validate() const {
  if (levels.empty()) throw std::invalid_argument("backbone: at least one level required");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const LevelSpec& l = levels[i];
    if (l.centroids < 1 || l.max_neighbors < 1 || l.radius <= 0.0 || l.widths.empty())
      throw std::invalid_argument("backbone: malformed level spec");
    if (i > 0 && l.centroids >= levels[i - 1].centroids)
      throw std::invalid_argument("backbone: centroid counts must be strictly decreasing");
  }
  if (levels.back().widths.back() != feat_dim)
    throw std::invalid_argument("backbone: last level width must equal feat_dim");
  if (levels.size() >= 2 && levels[levels.size() - 2].widths.back() != feat_dim)
    throw std::invalid_argument("backbone: penultimate level width must equal feat_dim");
}

namespace {
std::string pname(const std::string& prefix, std::size_t level, std::size_t layer,
                  const char* which) {
  return prefix + ".l" + std::to_string(level) + ".m" + std::to_string(layer) + "." + which;
}
}  // namespace

void init_params(ad::ParamStore& store, const std::string& prefix, const BackboneConfig& cfg,
                 Rng& rng) {
  cfg.validate();
  int in_dim = 3;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
    int d = in_dim;
    for (std::size_t j = 0; j < cfg.levels[i].widths.size(); ++j) {
      int w = cfg.levels[i].widths[j];
      store.add(pname(prefix, i, j, "W"), ad::xavier_uniform(d, w, rng));
      store.add(pname(prefix, i, j, "b"), Mat::Zero(1, w));
      d = w;
    }
    in_dim = 3 + cfg.levels[i].widths.back();  // next level sees offsets + features
  }
}

EncodeResult encode(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix,
                    const BackboneConfig& cfg, const Mat& points) {
  cfg.validate();
  if (points.rows() < cfg.levels.front().centroids)
    throw std::invalid_argument("encode: fewer points than first-level centroids");

  Mat coords = points;
  Var feats;  // undefined at level 0 (offsets only)
  EncodeResult res;

  for (std::size_t li = 0; li < cfg.levels.size(); ++li) {
    const LevelSpec& lev = cfg.levels[li];
    const int cap = lev.max_neighbors;
    std::vector<Eigen::Index> centroid_idx =
        pointops::fps(coords, lev.centroids, cfg.fps_seed + li);
    Mat centers(lev.centroids, 3);
    for (int i = 0; i < lev.centroids; ++i) centers.row(i) = coords.row(centroid_idx[i]);

    // Radius grouping: nearest-first within radius, capped, padded by repeats.
    const double r2 = lev.radius * lev.radius;
    std::vector<Eigen::Index> flat;
    flat.reserve(static_cast<std::size_t>(lev.centroids) * cap);
    Mat offsets(static_cast<Eigen::Index>(lev.centroids) * cap, 3);
    std::vector<std::pair<double, Eigen::Index>> cand;
    for (int i = 0; i < lev.centroids; ++i) {
      cand.clear();
      for (Eigen::Index p = 0; p < coords.rows(); ++p) {
        double d2 = (coords.row(p) - centers.row(i)).squaredNorm();
        if (d2 <= r2) cand.emplace_back(d2, p);
      }
      std::sort(cand.begin(), cand.end());
      if (cand.empty()) cand.emplace_back(0.0, centroid_idx[i]);  // centroid is a real point
      for (int k = 0; k < cap; ++k) {
        const auto& c = cand[std::min<std::size_t>(k, cand.size() - 1)];
        Eigen::Index row = static_cast<Eigen::Index>(i) * cap + k;
        flat.push_back(c.second);
        offsets.row(row) = coords.row(c.second) - centers.row(i);
      }
    }

    Var x;
    if (feats.defined()) {
      Var gathered = ad::gather_rows(feats, flat);
      x = ad::concat_cols({ad::constant(tape, offsets), gathered});
    } else {
      x = ad::constant(tape, offsets);
    }
    for (std::size_t j = 0; j < lev.widths.size(); ++j) {
      Var w = ad::leaf(tape, store.at(pname(prefix, li, j, "W")));
      Var b = ad::leaf(tape, store.at(pname(prefix, li, j, "b")));
      x = ad::relu(ad::add_rowvec(ad::matmul(x, w), b));
    }
    Var pooled = ad::group_maxpool(x, cap);

    if (li + 2 == cfg.levels.size() || cfg.levels.size() == 1) {
      res.inter_coords = centers;
      res.inter_feats = pooled;
    }
    coords = centers;
    feats = pooled;
  }
  res.final_coords = coords;
  res.final_feats = feats;
  if (!res.inter_feats.defined()) {  // single level: intermediate == final
    res.inter_coords = res.final_coords;
    res.inter_feats = res.final_feats;
  }
  return res;
}

}  // namespace diffdet::backbone
