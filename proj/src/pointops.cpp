#include "diffdet/pointops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "diffdet/rng.hpp"

namespace diffdet::pointops {

std::vector<Eigen::Index> fps_from(const Mat& points, int k, Eigen::Index start_index) {
  Eigen::Index n = points.rows();
  if (n < 1) throw std::invalid_argument("fps: empty point set");
  if (k < 1 || k > n) throw std::invalid_argument("fps: k out of range");
  if (start_index < 0 || start_index >= n) throw std::invalid_argument("fps: bad start index");

  std::vector<Eigen::Index> selected;
  selected.reserve(k);
  selected.push_back(start_index);
  Eigen::VectorXd min_d2 =
      (points.rowwise() - points.row(start_index)).rowwise().squaredNorm();
  for (int s = 1; s < k; ++s) {
    Eigen::Index best = 0;
    double bv = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (min_d2(i) > bv) {
        bv = min_d2(i);
        best = i;
      }
    }
    selected.push_back(best);
    Eigen::VectorXd d2 = (points.rowwise() - points.row(best)).rowwise().squaredNorm();
    min_d2 = min_d2.cwiseMin(d2);
  }
  return selected;
}

std::vector<Eigen::Index> fps(const Mat& points, int k, std::uint64_t seed) {
  Eigen::Index n = points.rows();
  if (n < 1) throw std::invalid_argument("fps: empty point set");
  Eigen::RowVector3d centroid = points.colwise().mean();
  Eigen::Index start = 0;
  double best = std::numeric_limits<double>::infinity();
  std::uint64_t best_h = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double d2 = (points.row(i) - centroid).squaredNorm();
    std::uint64_t h = splitmix64(seed ^ static_cast<std::uint64_t>(i));
    if (d2 < best || (d2 == best && h < best_h)) {
      best = d2;
      best_h = h;
      start = i;
    }
  }
  return fps_from(points, k, start);
}

TrilinearStencil trilinear_stencil(const std::array<int, 3>& dims, const Vec3& idx_coords) {
  TrilinearStencil st{};
  std::array<Eigen::Index, 3> i0{}, i1{};
  std::array<double, 3> f{};
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw std::invalid_argument("trilinear: grid dims must be >= 1");
    double x = std::clamp(idx_coords(a), 0.0, static_cast<double>(dims[a] - 1));
    Eigen::Index lo = static_cast<Eigen::Index>(std::floor(x));
    if (lo > dims[a] - 2) lo = std::max<Eigen::Index>(0, dims[a] - 2);
    i0[a] = lo;
    i1[a] = std::min<Eigen::Index>(lo + 1, dims[a] - 1);
    f[a] = x - static_cast<double>(lo);
  }
  int c = 0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        Eigen::Index ix = dx ? i1[0] : i0[0];
        Eigen::Index iy = dy ? i1[1] : i0[1];
        Eigen::Index iz = dz ? i1[2] : i0[2];
        st.indices[c] = (ix * dims[1] + iy) * dims[2] + iz;
        st.weights[c] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) *
                        (dz ? f[2] : 1.0 - f[2]);
        ++c;
      }
  return st;
}

Mat interpolate_index_space(const Mat& grid, const std::array<int, 3>& dims,
                            const Mat& idx_coords) {
  Eigen::Index expected = static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2];
  if (grid.rows() != expected)
    throw std::invalid_argument("interpolate: grid rows do not match dims");
  if (idx_coords.cols() != 3) throw std::invalid_argument("interpolate: coords must be n x 3");
  Mat out = Mat::Zero(idx_coords.rows(), grid.cols());
  for (Eigen::Index i = 0; i < idx_coords.rows(); ++i) {
    TrilinearStencil st = trilinear_stencil(dims, idx_coords.row(i).transpose());
    for (int j = 0; j < 8; ++j) out.row(i) += st.weights[j] * grid.row(st.indices[j]);
  }
  return out;
}

Mat trilinear_interpolate(const Mat& grid, const std::array<int, 3>& dims, const Mat& coords01) {
  if (coords01.cols() != 3) throw std::invalid_argument("trilinear: coords must be n x 3");
  Mat idx(coords01.rows(), 3);
  for (Eigen::Index i = 0; i < coords01.rows(); ++i)
    for (int a = 0; a < 3; ++a) {
      double u = std::clamp(coords01(i, a), 0.0, 1.0);
      idx(i, a) = u * static_cast<double>(dims[a] - 1);
    }
  return interpolate_index_space(grid, dims, idx);
}

double aabb_iou(const BoundingBox3D& a, const BoundingBox3D& b) {
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    double alo = a.center(k) - a.size(k) / 2.0, ahi = a.center(k) + a.size(k) / 2.0;
    double blo = b.center(k) - b.size(k) / 2.0, bhi = b.center(k) + b.size(k) / 2.0;
    double w = std::min(ahi, bhi) - std::max(alo, blo);
    if (w <= 0.0) return 0.0;
    inter *= w;
  }
  double va = a.size.prod(), vb = b.size.prod();
  double uni = va + vb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<int> nms(const std::vector<BoundingBox3D>& boxes, const Eigen::VectorXd& scores,
                     double iou_thresh) {
  if (static_cast<Eigen::Index>(boxes.size()) != scores.size())
    throw std::invalid_argument("nms: boxes/scores size mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    if (scores(i) != scores(j)) return scores(i) > scores(j);
    return i < j;
  });
  std::vector<int> kept;
  for (int i : order) {
    bool suppress = false;
    for (int j : kept) {
      if (aabb_iou(boxes[i], boxes[j]) > iou_thresh) {
        suppress = true;
        break;
      }
    }
    if (!suppress) kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace diffdet::pointops
