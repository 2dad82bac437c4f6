#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <set>

#include "diffdet/pointops.hpp"
#include "diffdet/synthdata.hpp"

using namespace diffdet;
using namespace diffdet::synth;

TEST_CASE("scene generation is deterministic per seed") {
  SceneSpec spec = default_scene_spec();
  Scene a = generate_scene(spec, 7);
  Scene b = generate_scene(spec, 7);
  CHECK((a.cloud.points - b.cloud.points).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.gts.size() == b.gts.size());
  for (std::size_t i = 0; i < a.gts.size(); ++i) {
    CHECK((a.gts[i].center - b.gts[i].center).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.gts[i].label == b.gts[i].label);
  }
  Scene c = generate_scene(spec, 8);
  CHECK((a.cloud.points - c.cloud.points).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("zero-object spec produces a floor-only cloud with empty GT") {
  SceneSpec spec = default_scene_spec();
  spec.objects_min = spec.objects_max = 0;
  Scene s = generate_scene(spec, 3);
  CHECK(s.gts.empty());
  CHECK(s.cloud.points.rows() == spec.points_per_scene);
  // nothing above clutter/floor heights except clutter points
  for (Eigen::Index i = 0; i < s.cloud.points.rows(); ++i)
    if (s.point_source[i] == Scene::kFloor)
      CHECK(std::abs(s.cloud.points(i, 2)) <= spec.noise_std + 1e-12);
}

TEST_CASE("ground-truth boxes never overlap") {
  SceneSpec spec = default_scene_spec();
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 11ull, 99ull}) {
    Scene s = generate_scene(spec, seed);
    for (std::size_t i = 0; i < s.gts.size(); ++i)
      for (std::size_t j = i + 1; j < s.gts.size(); ++j)
        CHECK(pointops::aabb_iou(s.gts[i], s.gts[j]) == 0.0);
  }
}

TEST_CASE("object points stay within noise_std of their source box") {
  SceneSpec spec = default_scene_spec();
  for (std::uint64_t seed : {5ull, 6ull, 7ull}) {
    Scene s = generate_scene(spec, seed);
    REQUIRE(s.point_source.size() == static_cast<std::size_t>(s.cloud.points.rows()));
    for (Eigen::Index i = 0; i < s.cloud.points.rows(); ++i) {
      int src = s.point_source[i];
      if (src < 0) continue;
      CHECK(point_in_box(s.cloud.points.row(i).transpose(), s.gts[src],
                         spec.noise_std + 1e-9));
    }
  }
}

TEST_CASE("scene point budget and class coverage") {
  SceneSpec spec = default_scene_spec();
  Scene s = generate_scene(spec, 12);
  CHECK(s.cloud.points.rows() == spec.points_per_scene);
  CHECK(static_cast<int>(s.gts.size()) <= s.requested_objects);
  for (const auto& g : s.gts) {
    CHECK(g.label >= 0);
    CHECK(g.label < spec.n_classes());
    CHECK(g.size.minCoeff() > 0.0);
  }
}

TEST_CASE("identity transform leaves the scene unchanged") {
  SceneSpec spec = default_scene_spec();
  Scene s = generate_scene(spec, 21);
  SceneTransform id;  // weak flip drawn as identity
  Scene t = apply_transform(s, id);
  CHECK((t.cloud.points - s.cloud.points).cwiseAbs().maxCoeff() == 0.0);
  for (std::size_t i = 0; i < s.gts.size(); ++i)
    CHECK((t.gts[i].center - s.gts[i].center).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("double flip about the same axis restores original coordinates") {
  SceneSpec spec = default_scene_spec();
  Scene s = generate_scene(spec, 22);
  SceneTransform fx;
  fx.flip_x = true;
  Scene twice = apply_transform(apply_transform(s, fx), fx);
  CHECK((twice.cloud.points - s.cloud.points).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t i = 0; i < s.gts.size(); ++i) {
    CHECK((twice.gts[i].center - s.gts[i].center).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((twice.gts[i].size - s.gts[i].size).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("augmentation preserves nearest-box membership and containment") {
  SceneSpec spec = default_scene_spec();
  Scene s = generate_scene(spec, 23);
  REQUIRE(!s.gts.empty());
  auto nearest = [](const Scene& sc, Eigen::Index i) {
    int best = -1;
    double bd = 1e18;
    for (int g = 0; g < static_cast<int>(sc.gts.size()); ++g) {
      double d = (sc.cloud.points.row(i).transpose() - sc.gts[g].center).squaredNorm();
      if (d < bd) {
        bd = d;
        best = g;
      }
    }
    return best;
  };
  for (std::uint64_t aseed : {100ull, 101ull, 102ull}) {
    Scene w = augment(s, AugmentStrength::kStrong, aseed);
    for (Eigen::Index i = 0; i < s.cloud.points.rows(); ++i) {
      CHECK(nearest(s, i) == nearest(w, i));
      int src = s.point_source[i];
      if (src >= 0) {
        // containment carries over; slack scales with the global scale factor
        CHECK(point_in_box(w.cloud.points.row(i).transpose(), w.gts[src],
                           spec.noise_std * 1.2 + 1e-9));
      }
    }
  }
}

TEST_CASE("weak augmentation never rotates or rescales") {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    SceneTransform t = sample_transform(AugmentStrength::kWeak, rng);
    CHECK(t.rot == 0.0);
    CHECK(t.scale == 1.0);
  }
}

TEST_CASE("split: full ratio, exact arithmetic, disjoint and exhaustive") {
  SplitResult all = split(100, 1.0, 1);
  CHECK(all.labeled.size() == 100);
  CHECK(all.unlabeled.empty());

  SplitResult ten = split(100, 0.1, 1);
  CHECK(ten.labeled.size() == 10);
  CHECK(ten.unlabeled.size() == 90);
  std::set<int> seen(ten.labeled.begin(), ten.labeled.end());
  for (int u : ten.unlabeled) {
    CHECK(!seen.count(u));
    seen.insert(u);
  }
  CHECK(seen.size() == 100);

  SplitResult other = split(100, 0.1, 2);
  CHECK(other.labeled.size() == 10);
  CHECK(other.labeled != ten.labeled);

  CHECK_THROWS_AS(split(100, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split(100, 1.5, 1), std::invalid_argument);
}

TEST_CASE("scene files round-trip exactly") {
  SceneSpec spec = default_scene_spec();
  Scene s = generate_scene(spec, 31);
  std::string path =
      (std::filesystem::temp_directory_path() / "diffdet_scene_roundtrip.txt").string();
  save_scene(path, s);
  Scene r = load_scene(path);
  CHECK(r.seed == s.seed);
  CHECK(r.requested_objects == s.requested_objects);
  CHECK((r.cloud.points - s.cloud.points).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(r.gts.size() == s.gts.size());
  for (std::size_t i = 0; i < s.gts.size(); ++i) {
    CHECK((r.gts[i].center - s.gts[i].center).cwiseAbs().maxCoeff() == 0.0);
    CHECK((r.gts[i].size - s.gts[i].size).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.gts[i].yaw == s.gts[i].yaw);
    CHECK(r.gts[i].label == s.gts[i].label);
  }
  std::remove(path.c_str());
}

TEST_CASE("class size signatures are pairwise separable") {
  auto classes = default_classes();
  for (std::size_t a = 0; a < classes.size(); ++a)
    for (std::size_t b = a + 1; b < classes.size(); ++b) {
      bool separated = false;
      for (int k = 0; k < 3; ++k)
        if (classes[a].size_hi(k) < classes[b].size_lo(k) ||
            classes[b].size_hi(k) < classes[a].size_lo(k))
          separated = true;
      CHECK(separated);
    }
}
