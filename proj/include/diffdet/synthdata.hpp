#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "diffdet/pointops.hpp"
#include "diffdet/rng.hpp"

namespace diffdet::synth {

/// One object category: a size-range signature (meters) plus a relative
/// surface point density. Signatures are chosen pairwise separable so class
/// identity is recoverable from geometry alone.
struct ClassTemplate {
  int id = 0;
  std::string name;
  Eigen::Vector3d size_lo = Eigen::Vector3d::Constant(0.3);
  Eigen::Vector3d size_hi = Eigen::Vector3d::Constant(0.5);
  double density = 1.0;
};

struct SceneSpec {
  Eigen::Vector3d room = {6.0, 6.0, 3.0};  // extents; x,y centered on 0, z in [0, room.z]
  int objects_min = 3;
  int objects_max = 8;
  int points_per_scene = 2048;
  double clutter_fraction = 0.05;
  double floor_fraction = 0.20;
  double noise_std = 0.01;  // per-axis jitter, clipped at +-noise_std
  std::vector<ClassTemplate> classes;

  int n_classes() const { return static_cast<int>(classes.size()); }
  void validate() const;
};

/// The six default size-separable categories.
std::vector<ClassTemplate> default_classes();
SceneSpec default_scene_spec();

struct Scene {
  PointCloud cloud;
  std::vector<BoundingBox3D> gts;
  /// Per-point provenance: object index, kFloor or kClutter. In-memory only
  /// (not part of the scene file format).
  std::vector<int> point_source;
  int requested_objects = 0;  // placement may fall short after bounded retries
  std::uint64_t seed = 0;

  static constexpr int kFloor = -1;
  static constexpr int kClutter = -2;
};

/// Deterministic per (spec, seed): non-overlapping axis-aligned cuboids on a
/// floor plane, surface-sampled points with bounded jitter, floor and clutter
/// points.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

enum class AugmentStrength { kWeak, kStrong };

/// Flip(s) about the room center axes, optional upright rotation and global
/// scale. Kept explicit so pseudo-labels can be mapped between views.
struct SceneTransform {
  bool flip_x = false;
  bool flip_y = false;
  double rot = 0.0;    // radians about +z
  double scale = 1.0;

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;
  BoundingBox3D apply(const BoundingBox3D& b) const;
};

/// Weak = random flips; strong = flips + rotation (+-30 deg) + scale
/// (0.85-1.15).
SceneTransform sample_transform(AugmentStrength strength, Rng& rng);

Scene apply_transform(const Scene& scene, const SceneTransform& t);

/// Spec-level op: sample a transform from `seed` and apply it.
Scene augment(const Scene& scene, AugmentStrength strength, std::uint64_t seed);

/// Oriented containment test (accounts for yaw), with `slack` added to each
/// half-extent.
bool point_in_box(const Eigen::Vector3d& p, const BoundingBox3D& b, double slack = 0.0);

/// Deterministic disjoint exhaustive partition of scene indices 0..n-1.
struct SplitResult {
  std::vector<int> labeled;
  std::vector<int> unlabeled;
};
SplitResult split(int n_scenes, double labeled_ratio, std::uint64_t seed);

// Scene file format (text, one record per file):
//   d3scene 1 <seed> <requested_objects>
//   points <n>
//   <x> <y> <z>                  # meters, one point per line
//   boxes <k>
//   <cx> <cy> <cz> <sx> <sy> <sz> <yaw> <label>
// Floats printed with %.17g so files round-trip exactly.
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

}  // namespace diffdet::synth
