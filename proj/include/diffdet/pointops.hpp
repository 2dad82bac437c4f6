#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <vector>

namespace diffdet {

using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;

/// Raw scene points, meters. n x 3.
struct PointCloud {
  Mat points;
  Eigen::Index size() const { return points.rows(); }
};

/// Axis-aligned-by-default 3D box: center, size, yaw about the upright axis,
/// class label. Yaw is carried for augmentation bookkeeping; IoU ignores it.
struct BoundingBox3D {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;
  int label = 0;
};

namespace pointops {

/// Farthest point sampling with an explicit start index. Each subsequent pick
/// maximizes the minimum squared distance to the selected set; ties break to
/// the lowest index.
std::vector<Eigen::Index> fps_from(const Mat& points, int k, Eigen::Index start_index);

/// Seeded FPS: the start point is the one nearest the cloud centroid, with
/// coincident-distance ties broken by a seed-keyed hash. This keeps the chosen
/// point set stable under permutation and translation of the input.
std::vector<Eigen::Index> fps(const Mat& points, int k, std::uint64_t seed);

/// Trilinear interpolation stencil in continuous index space: idx in
/// [0, dim-1] per axis (values outside are clamped). Returns the 8 flat
/// corner indices (x-major: ((ix * dim_y) + iy) * dim_z + iz) and weights.
struct TrilinearStencil {
  std::array<Eigen::Index, 8> indices;
  std::array<double, 8> weights;
};
TrilinearStencil trilinear_stencil(const std::array<int, 3>& dims, const Vec3& idx_coords);

/// Interpolate a flattened L*W*H x C grid at continuous index coordinates
/// (rows of idx_coords, one per output row).
Mat interpolate_index_space(const Mat& grid, const std::array<int, 3>& dims,
                            const Mat& idx_coords);

/// Classic corner-lattice trilinear interpolation: node (i,j,k) sits at
/// normalized coordinate (i/(L-1), j/(W-1), k/(H-1)); coords outside [0,1]^3
/// are clamped to the boundary.
Mat trilinear_interpolate(const Mat& grid, const std::array<int, 3>& dims, const Mat& coords01);

/// Axis-aligned IoU of the two boxes' extents (yaw ignored).
double aabb_iou(const BoundingBox3D& a, const BoundingBox3D& b);

/// Greedy descending-score suppression; ties break to the lower index. A box
/// is kept iff IoU with every higher-scored kept box is <= iou_thresh.
std::vector<int> nms(const std::vector<BoundingBox3D>& boxes, const Eigen::VectorXd& scores,
                     double iou_thresh);

}  // namespace pointops
}  // namespace diffdet
