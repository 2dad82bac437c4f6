#include "diffdet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace diffdet::synth {

void SceneSpec::validate() const {
  if (room.minCoeff() <= 0.0) throw std::invalid_argument("scene spec: room extents must be positive");
  if (objects_min < 0 || objects_max < objects_min)
    throw std::invalid_argument("scene spec: bad object count range");
  if (points_per_scene < 16) throw std::invalid_argument("scene spec: too few points");
  if (clutter_fraction < 0.0 || clutter_fraction >= 1.0 || floor_fraction < 0.0 ||
      clutter_fraction + floor_fraction >= 1.0)
    throw std::invalid_argument("scene spec: bad point budget fractions");
  if (classes.empty()) throw std::invalid_argument("scene spec: no class templates");
}

std::vector<ClassTemplate> default_classes() {
  auto t = [](int id, const char* name, double lx, double ly, double lz, double hx, double hy,
              double hz, double den) {
    ClassTemplate c;
    c.id = id;
    c.name = name;
    c.size_lo = {lx, ly, lz};
    c.size_hi = {hx, hy, hz};
    c.density = den;
    return c;
  };
  return {
      t(0, "crate", 0.30, 0.30, 0.30, 0.50, 0.50, 0.50, 3.0),
      t(1, "table", 1.20, 1.20, 0.55, 1.80, 1.80, 0.80, 1.0),
      t(2, "cabinet", 0.40, 0.40, 1.60, 0.70, 0.70, 2.20, 1.0),
      t(3, "sofa", 1.60, 0.70, 0.55, 2.20, 1.00, 0.85, 1.0),
      t(4, "pillar", 0.18, 0.18, 2.30, 0.32, 0.32, 2.70, 3.0),
      t(5, "bed", 1.80, 1.40, 0.30, 2.40, 1.90, 0.50, 1.0),
  };
}

SceneSpec default_scene_spec() {
  SceneSpec s;
  s.classes = default_classes();
  return s;
}

namespace {

bool aabb_overlap(const BoundingBox3D& a, const BoundingBox3D& b, double margin) {
  for (int k = 0; k < 3; ++k) {
    double alo = a.center(k) - a.size(k) / 2.0 - margin;
    double ahi = a.center(k) + a.size(k) / 2.0 + margin;
    double blo = b.center(k) - b.size(k) / 2.0;
    double bhi = b.center(k) + b.size(k) / 2.0;
    if (ahi <= blo || bhi <= alo) return false;
  }
  return true;
}

double surface_area(const Eigen::Vector3d& s) {
  return 2.0 * (s(0) * s(1) + s(1) * s(2) + s(0) * s(2));
}

/// Uniform point on the cuboid surface (face chosen by area).
Eigen::Vector3d sample_surface(const BoundingBox3D& b, Rng& rng) {
  const Eigen::Vector3d& s = b.size;
  double axy = s(0) * s(1), ayz = s(1) * s(2), axz = s(0) * s(2);
  double total = 2.0 * (axy + ayz + axz);
  double u = rng.uniform(0.0, total);
  int face;     // axis the face is perpendicular to
  double sign;  // which of the two faces
  if (u < 2.0 * axy) {
    face = 2;
    sign = u < axy ? -1.0 : 1.0;
  } else if (u < 2.0 * axy + 2.0 * ayz) {
    face = 0;
    sign = (u - 2.0 * axy) < ayz ? -1.0 : 1.0;
  } else {
    face = 1;
    sign = (u - 2.0 * axy - 2.0 * ayz) < axz ? -1.0 : 1.0;
  }
  Eigen::Vector3d p;
  for (int k = 0; k < 3; ++k)
    p(k) = k == face ? sign * s(k) / 2.0 : rng.uniform(-s(k) / 2.0, s(k) / 2.0);
  return b.center + p;
}

double clipped_noise(Rng& rng, double std) {
  if (std <= 0.0) return 0.0;
  return std::clamp(rng.normal(0.0, std), -std, std);
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, "scene", 0));
  Scene scene;
  scene.seed = seed;

  int want = spec.objects_min +
             static_cast<int>(rng.integer(spec.objects_max - spec.objects_min + 1));
  scene.requested_objects = want;

  const double hx = spec.room(0) / 2.0, hy = spec.room(1) / 2.0;
  for (int o = 0; o < want; ++o) {
    int cls = static_cast<int>(rng.integer(spec.classes.size()));
    const ClassTemplate& tpl = spec.classes[cls];
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      BoundingBox3D b;
      for (int k = 0; k < 3; ++k) b.size(k) = rng.uniform(tpl.size_lo(k), tpl.size_hi(k));
      b.label = tpl.id;
      b.yaw = 0.0;
      double mx = hx - b.size(0) / 2.0 - 0.05, my = hy - b.size(1) / 2.0 - 0.05;
      if (mx <= 0.0 || my <= 0.0) break;  // template does not fit this room
      b.center = {rng.uniform(-mx, mx), rng.uniform(-my, my), b.size(2) / 2.0};
      bool clash = false;
      for (const auto& g : scene.gts)
        if (aabb_overlap(b, g, 0.10)) {
          clash = true;
          break;
        }
      if (!clash) {
        scene.gts.push_back(b);
        placed = true;
      }
    }
    // Placement can fail in a crowded room; the shortfall is visible through
    // requested_objects vs gts.size().
  }

  // Point budget: clutter and floor shares fixed, remainder split over
  // objects by density-weighted surface area.
  int total = spec.points_per_scene;
  int n_clutter = static_cast<int>(std::lround(spec.clutter_fraction * total));
  int n_floor = static_cast<int>(std::lround(spec.floor_fraction * total));
  int n_objects = total - n_clutter - n_floor;
  if (scene.gts.empty()) {
    n_floor += n_objects;
    n_objects = 0;
  }

  std::vector<double> weight(scene.gts.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < scene.gts.size(); ++i) {
    weight[i] = surface_area(scene.gts[i].size) * spec.classes[scene.gts[i].label].density;
    wsum += weight[i];
  }
  std::vector<int> counts(scene.gts.size(), 0);
  int assigned = 0;
  for (std::size_t i = 0; i < scene.gts.size(); ++i) {
    counts[i] = static_cast<int>(std::floor(n_objects * weight[i] / wsum));
    counts[i] = std::max(counts[i], 16);  // even tiny objects stay detectable
    assigned += counts[i];
  }
  // Reconcile rounding drift against the floor share.
  n_floor += n_objects - assigned;
  if (n_floor < 0) n_floor = 0;

  std::vector<Eigen::Vector3d> pts;
  std::vector<int> src;
  pts.reserve(total);
  src.reserve(total);
  for (std::size_t i = 0; i < scene.gts.size(); ++i) {
    for (int k = 0; k < counts[i]; ++k) {
      Eigen::Vector3d p = sample_surface(scene.gts[i], rng);
      for (int a = 0; a < 3; ++a) p(a) += clipped_noise(rng, spec.noise_std);
      pts.push_back(p);
      src.push_back(static_cast<int>(i));
    }
  }
  for (int k = 0; k < n_floor; ++k) {
    Eigen::Vector3d p(rng.uniform(-hx, hx), rng.uniform(-hy, hy), 0.0);
    for (int a = 0; a < 3; ++a) p(a) += clipped_noise(rng, spec.noise_std);
    pts.push_back(p);
    src.push_back(Scene::kFloor);
  }
  while (static_cast<int>(pts.size()) < total) {
    Eigen::Vector3d p(rng.uniform(-hx, hx), rng.uniform(-hy, hy),
                      rng.uniform(0.0, spec.room(2)));
    bool inside = false;
    for (const auto& g : scene.gts)
      if (point_in_box(p, g, spec.noise_std)) {
        inside = true;
        break;
      }
    if (!inside) {
      pts.push_back(p);
      src.push_back(Scene::kClutter);
    }
  }
  if (static_cast<int>(pts.size()) > total) {
    pts.resize(total);
    src.resize(total);
  }

  scene.cloud.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i)
    scene.cloud.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  scene.point_source = std::move(src);
  return scene;
}

Eigen::Vector3d SceneTransform::apply(const Eigen::Vector3d& p) const {
  Eigen::Vector3d q = p;
  if (flip_x) q(0) = -q(0);
  if (flip_y) q(1) = -q(1);
  double c = std::cos(rot), s = std::sin(rot);
  Eigen::Vector3d r(c * q(0) - s * q(1), s * q(0) + c * q(1), q(2));
  return r * scale;
}

namespace {
double wrap_pi(double a) {
  while (a >= std::numbers::pi) a -= 2.0 * std::numbers::pi;
  while (a < -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}
}  // namespace

BoundingBox3D SceneTransform::apply(const BoundingBox3D& b) const {
  BoundingBox3D out = b;
  double yaw = b.yaw;
  if (flip_x) yaw = std::numbers::pi - yaw;
  if (flip_y) yaw = -yaw;
  out.yaw = wrap_pi(yaw + rot);
  out.center = apply(b.center);
  out.size = b.size * scale;
  return out;
}

SceneTransform sample_transform(AugmentStrength strength, Rng& rng) {
  SceneTransform t;
  t.flip_x = rng.bernoulli(0.5);
  t.flip_y = rng.bernoulli(0.5);
  if (strength == AugmentStrength::kStrong) {
    t.rot = rng.uniform(-std::numbers::pi / 6.0, std::numbers::pi / 6.0);
    t.scale = rng.uniform(0.85, 1.15);
  }
  return t;
}

Scene apply_transform(const Scene& scene, const SceneTransform& t) {
  Scene out = scene;
  for (Eigen::Index i = 0; i < out.cloud.points.rows(); ++i)
    out.cloud.points.row(i) = t.apply(scene.cloud.points.row(i).transpose()).transpose();
  for (std::size_t i = 0; i < out.gts.size(); ++i) out.gts[i] = t.apply(scene.gts[i]);
  return out;
}

Scene augment(const Scene& scene, AugmentStrength strength, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "augment", 0));
  return apply_transform(scene, sample_transform(strength, rng));
}

bool point_in_box(const Eigen::Vector3d& p, const BoundingBox3D& b, double slack) {
  Eigen::Vector3d d = p - b.center;
  double c = std::cos(-b.yaw), s = std::sin(-b.yaw);
  Eigen::Vector3d local(c * d(0) - s * d(1), s * d(0) + c * d(1), d(2));
  for (int k = 0; k < 3; ++k)
    if (std::abs(local(k)) > b.size(k) / 2.0 + slack) return false;
  return true;
}

SplitResult split(int n_scenes, double labeled_ratio, std::uint64_t seed) {
  if (labeled_ratio <= 0.0 || labeled_ratio > 1.0)
    throw std::invalid_argument("split: labeled_ratio must be in (0, 1]");
  if (n_scenes < 1) throw std::invalid_argument("split: n_scenes must be >= 1");
  Rng rng(derive_seed(seed, "split", 0));
  std::vector<int> perm = rng.permutation(n_scenes);
  int n_labeled = std::max(1, static_cast<int>(std::lround(labeled_ratio * n_scenes)));
  SplitResult r;
  r.labeled.assign(perm.begin(), perm.begin() + n_labeled);
  r.unlabeled.assign(perm.begin() + n_labeled, perm.end());
  std::sort(r.labeled.begin(), r.labeled.end());
  std::sort(r.unlabeled.begin(), r.unlabeled.end());
  return r;
}

namespace {
std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void save_scene(const std::string& path, const Scene& scene) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write scene: " + path);
  os << "d3scene 1 " << scene.seed << " " << scene.requested_objects << "\n";
  os << "points " << scene.cloud.points.rows() << "\n";
  for (Eigen::Index i = 0; i < scene.cloud.points.rows(); ++i)
    os << fmt_double(scene.cloud.points(i, 0)) << " " << fmt_double(scene.cloud.points(i, 1))
       << " " << fmt_double(scene.cloud.points(i, 2)) << "\n";
  os << "boxes " << scene.gts.size() << "\n";
  for (const auto& b : scene.gts)
    os << fmt_double(b.center(0)) << " " << fmt_double(b.center(1)) << " "
       << fmt_double(b.center(2)) << " " << fmt_double(b.size(0)) << " " << fmt_double(b.size(1))
       << " " << fmt_double(b.size(2)) << " " << fmt_double(b.yaw) << " " << b.label << "\n";
  if (!os) throw std::runtime_error("scene write failed: " + path);
}

Scene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open scene: " + path);
  std::string tag;
  int version = 0;
  Scene scene;
  is >> tag >> version >> scene.seed >> scene.requested_objects;
  if (tag != "d3scene" || version != 1)
    throw std::runtime_error("bad scene header in " + path);
  Eigen::Index n = 0;
  is >> tag >> n;
  if (tag != "points") throw std::runtime_error("bad scene points section in " + path);
  scene.cloud.points.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    is >> scene.cloud.points(i, 0) >> scene.cloud.points(i, 1) >> scene.cloud.points(i, 2);
  std::size_t k = 0;
  is >> tag >> k;
  if (tag != "boxes") throw std::runtime_error("bad scene boxes section in " + path);
  scene.gts.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    BoundingBox3D& b = scene.gts[i];
    is >> b.center(0) >> b.center(1) >> b.center(2) >> b.size(0) >> b.size(1) >> b.size(2) >>
        b.yaw >> b.label;
  }
  if (!is) throw std::runtime_error("scene parse failed: " + path);
  return scene;
}

}  // namespace diffdet::synth
