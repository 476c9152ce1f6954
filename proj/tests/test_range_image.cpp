#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <set>

#include "lidarseed/range_image.hpp"
#include "lidarseed/synth.hpp"

using namespace lidarseed;

namespace {

BeamConfig test_beams(int rows = 16, int cols = 180) {
  BeamConfig cfg;
  cfg.n_rows = rows;
  cfg.n_cols = cols;
  cfg.azimuth_fov = M_PI;
  for (int i = 0; i < rows; ++i)
    cfg.elevation_angles.push_back((-15.0 + 20.0 * i / (rows - 1)) * M_PI / 180.0);
  return cfg;
}

// Naive flood fill over pixel pairs with the identical criterion; union-find.
std::vector<std::vector<int>> reference_segmentation(const RangeImage& ri,
                                                     const std::vector<bool>& ground,
                                                     const BeamConfig& cfg, double beta_deg,
                                                     int min_points) {
  const double thr = beta_deg * M_PI / 180.0;
  const int n = ri.n_rows * ri.n_cols;
  std::vector<int> parent(n);
  for (int i = 0; i < n; ++i) parent[i] = i;
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto unite = [&](int a, int b) { parent[find(a)] = find(b); };

  auto ok = [&](int r, int c) {
    return ri.occupied(r, c) && !ground[r * ri.n_cols + c];
  };
  for (int r = 0; r < ri.n_rows; ++r) {
    for (int c = 0; c < ri.n_cols; ++c) {
      if (!ok(r, c)) continue;
      if (r + 1 < ri.n_rows && ok(r + 1, c) &&
          angle_criterion_merge(ri.range_at(r, c), ri.range_at(r + 1, c),
                                cfg.elevation_angles[r + 1] - cfg.elevation_angles[r], thr))
        unite(r * ri.n_cols + c, (r + 1) * ri.n_cols + c);
      if (c + 1 < ri.n_cols && ok(r, c + 1) &&
          angle_criterion_merge(ri.range_at(r, c), ri.range_at(r, c + 1),
                                cfg.azimuth_step(), thr))
        unite(r * ri.n_cols + c, r * ri.n_cols + c + 1);
    }
  }
  std::map<int, std::vector<int>> comps;
  for (int r = 0; r < ri.n_rows; ++r)
    for (int c = 0; c < ri.n_cols; ++c)
      if (ok(r, c)) comps[find(r * ri.n_cols + c)].push_back(ri.index_at(r, c));
  std::vector<std::vector<int>> out;
  for (auto& [_, members] : comps) {
    if (static_cast<int>(members.size()) < min_points) continue;
    std::sort(members.begin(), members.end());
    out.push_back(std::move(members));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("build_range_image single point") {
  const BeamConfig cfg = test_beams();
  PointCloud cloud;
  cloud.frame_id = "f";
  const double elev = cfg.elevation_angles[4];
  cloud.points.push_back({10.0 * std::cos(elev), 0.0, 10.0 * std::sin(elev), 0.5});
  const RangeImage ri = build_range_image(cloud, cfg);
  int occupied = 0;
  for (int r = 0; r < ri.n_rows; ++r)
    for (int c = 0; c < ri.n_cols; ++c)
      if (ri.occupied(r, c)) {
        ++occupied;
        CHECK(ri.range_at(r, c) == Catch::Approx(10.0));
        CHECK(r == 4);
      }
  CHECK(occupied == 1);
}

TEST_CASE("build_range_image nearer return wins") {
  const BeamConfig cfg = test_beams();
  PointCloud cloud;
  cloud.frame_id = "f";
  const double elev = cfg.elevation_angles[8];
  for (double d : {7.0, 5.0})
    cloud.points.push_back({d * std::cos(elev), 0.0, d * std::sin(elev), 0.0});
  const RangeImage ri = build_range_image(cloud, cfg);
  for (int r = 0; r < ri.n_rows; ++r)
    for (int c = 0; c < ri.n_cols; ++c)
      if (ri.occupied(r, c)) CHECK(ri.range_at(r, c) == Catch::Approx(5.0));
}

TEST_CASE("build_range_image skips off-raster points") {
  const BeamConfig cfg = test_beams();
  PointCloud cloud;
  cloud.frame_id = "f";
  cloud.points.push_back({1.0, 0.0, 5.0, 0.0});   // far above the top beam
  cloud.points.push_back({-5.0, 0.1, 0.0, 0.0});  // behind: outside azimuth fov
  const RangeImage ri = build_range_image(cloud, cfg);
  CHECK(ri.skipped_points == 2);
}

TEST_CASE("remove_ground flat plane vs wall") {
  const BeamConfig cfg = test_beams();
  SceneDescription ground_only;  // plane at z = -1.73, no objects
  std::mt19937_64 rng(3);
  const auto sweep = simulate_lidar(ground_only, cfg, rng, 0.0);
  const RangeImage ri = build_range_image(sweep.cloud, cfg);
  const auto mask = remove_ground(ri, sweep.cloud, 10.0);
  std::size_t occupied = 0, ground = 0;
  for (int r = 0; r < ri.n_rows; ++r)
    for (int c = 0; c < ri.n_cols; ++c)
      if (ri.occupied(r, c)) {
        ++occupied;
        if (mask[r * ri.n_cols + c]) ++ground;
      }
  CHECK(occupied > 100);
  CHECK(ground == occupied);

  // Vertical wall: a giant box directly ahead, ground far below every beam.
  SceneDescription wall;
  wall.ground_z = -500.0;
  PlacedObject slab;
  slab.shape = ShapeKind::box;
  slab.size = {1.0, 60.0, 600.0};
  slab.x = 20.0;
  slab.y = 0.0;
  wall.objects.push_back(slab);
  const auto wall_sweep = simulate_lidar(wall, cfg, rng, 0.0);
  const RangeImage wall_ri = build_range_image(wall_sweep.cloud, cfg);
  const auto wall_mask = remove_ground(wall_ri, wall_sweep.cloud, 10.0);
  std::size_t wall_ground = 0;
  for (bool g : wall_mask) wall_ground += g;
  CHECK(wall_ground == 0);
}

TEST_CASE("remove_ground agrees with per-point source labels") {
  const BeamConfig cfg = test_beams(32, 360);
  std::mt19937_64 rng(17);
  SceneDescription scene;
  PlacedObject box;
  box.size = {2.0, 2.0, 2.0};
  box.x = 12.0;
  box.y = 0.0;
  scene.objects.push_back(box);
  const auto sweep = simulate_lidar(scene, cfg, rng, 0.0);
  const RangeImage ri = build_range_image(sweep.cloud, cfg);
  const auto mask = remove_ground(ri, sweep.cloud, 10.0);

  std::size_t agree = 0, occupied = 0;
  for (int r = 0; r < ri.n_rows; ++r)
    for (int c = 0; c < ri.n_cols; ++c)
      if (ri.occupied(r, c)) {
        ++occupied;
        const bool truly_ground = sweep.source_ids[ri.index_at(r, c)] == 0;
        if (truly_ground == mask[r * ri.n_cols + c]) ++agree;
      }
  CHECK(static_cast<double>(agree) / static_cast<double>(occupied) >= 0.97);
}

TEST_CASE("segment_range_image separates distant objects") {
  const BeamConfig cfg = test_beams(32, 360);
  std::mt19937_64 rng(29);
  SceneDescription scene;
  for (double y : {-3.0, 3.0}) {
    PlacedObject box;
    box.size = {2.0, 2.0, 2.0};
    box.x = 10.0;
    box.y = y;
    scene.objects.push_back(box);
  }
  const auto sweep = simulate_lidar(scene, cfg, rng, 0.0);
  const RangeImage ri = build_range_image(sweep.cloud, cfg);
  const auto ground = remove_ground(ri, sweep.cloud, 10.0);
  const auto segs = segment_range_image(ri, ground, cfg, 10.0, 20);
  REQUIRE(segs.size() == 2);

  // Each segment should be pure in oracle source id.
  for (const auto& seg : segs) {
    std::set<int> sources;
    for (int idx : seg) sources.insert(sweep.source_ids[idx]);
    CHECK(sources.size() == 1);
    CHECK(*sources.begin() != 0);
  }
}

TEST_CASE("segment_range_image edge cases") {
  const BeamConfig cfg = test_beams();
  PointCloud cloud;
  cloud.frame_id = "f";
  const double elev = cfg.elevation_angles[5];
  cloud.points.push_back({9.0 * std::cos(elev), 0.5, 9.0 * std::sin(elev), 0.0});
  const RangeImage ri = build_range_image(cloud, cfg);
  const std::vector<bool> no_ground(ri.ranges.size(), false);
  CHECK(segment_range_image(ri, no_ground, cfg, 10.0, 20).empty());  // below min points

  const std::vector<bool> all_ground(ri.ranges.size(), true);
  CHECK(segment_range_image(ri, all_ground, cfg, 10.0, 1).empty());
}

TEST_CASE("segments are pairwise disjoint and order-invariant") {
  const DatasetConfig cfg;
  std::mt19937_64 seed_rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const ScenePackage pkg = generate_frame(cfg, seed_rng(), "f");
    const RangeImage ri = build_range_image(pkg.cloud, cfg.beams);
    const auto ground = remove_ground(ri, pkg.cloud, 10.0);
    const auto segs = segment_range_image(ri, ground, cfg.beams, 10.0, 20);

    std::set<int> seen;
    for (const auto& s : segs)
      for (int idx : s) CHECK(seen.insert(idx).second);

    // Shuffle the cloud; partitions must be identical sets of points.
    std::vector<int> perm(pkg.cloud.points.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(trial);
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud shuffled;
    shuffled.frame_id = pkg.cloud.frame_id;
    for (int idx : perm) shuffled.points.push_back(pkg.cloud.points[idx]);

    const RangeImage ri2 = build_range_image(shuffled, cfg.beams);
    const auto ground2 = remove_ground(ri2, shuffled, 10.0);
    auto segs2 = segment_range_image(ri2, ground2, cfg.beams, 10.0, 20);

    // Compare as sets of original point ids.
    std::set<std::vector<int>> set1(segs.begin(), segs.end());
    std::set<std::vector<int>> set2;
    for (auto& s : segs2) {
      for (auto& idx : s) idx = perm[idx];
      std::sort(s.begin(), s.end());
      set2.insert(s);
    }
    CHECK(set1 == set2);
  }
}

TEST_CASE("segmentation matches naive reference flood fill") {
  const DatasetConfig cfg;
  std::mt19937_64 seed_rng(59);
  for (int trial = 0; trial < 10; ++trial) {
    const ScenePackage pkg = generate_frame(cfg, seed_rng(), "f");
    const RangeImage ri = build_range_image(pkg.cloud, cfg.beams);
    const auto ground = remove_ground(ri, pkg.cloud, 10.0);
    auto fast = segment_range_image(ri, ground, cfg.beams, 10.0, 20);
    std::sort(fast.begin(), fast.end());
    const auto ref = reference_segmentation(ri, ground, cfg.beams, 10.0, 20);
    CHECK(fast == ref);
  }
}

TEST_CASE("extract_segments composition") {
  const DatasetConfig cfg;
  SegmentationParams params;

  // Empty road -> EmptyFrame
  SceneDescription empty_scene;
  std::mt19937_64 rng(5);
  const auto sweep = simulate_lidar(empty_scene, cfg.beams, rng);
  PointCloud cloud = sweep.cloud;
  cloud.frame_id = "empty";
  CHECK_THROWS_AS(extract_segments(cloud, cfg.camera, cfg.beams, params), EmptyFrameError);

  // Scene with objects: every proposal bbox matches segment_to_bbox of its points.
  const ScenePackage pkg = generate_frame(cfg, 12345, "f0");
  const auto proposals = extract_segments(pkg.cloud, cfg.camera, cfg.beams, params);
  REQUIRE(!proposals.empty());
  for (const auto& p : proposals) {
    const auto box = segment_to_bbox(gather_points(pkg.cloud, p.point_indices), cfg.camera,
                                     params.min_visible_points);
    REQUIRE(box);
    CHECK(p.bbox == *box);
    CHECK(static_cast<int>(p.point_indices.size()) >= params.min_segment_points);
  }
}

TEST_CASE("proposals match ground-truth boxes on a clean frame") {
  DatasetConfig cfg;
  cfg.min_objects = 3;
  cfg.max_objects = 3;
  SegmentationParams params;
  int matched = 0, total_gt = 0;
  std::mt19937_64 seed_rng(73);
  for (int trial = 0; trial < 8; ++trial) {
    const ScenePackage pkg = generate_frame(cfg, seed_rng(), "f");
    std::vector<SegmentProposal> proposals;
    try {
      proposals = extract_segments(pkg.cloud, cfg.camera, cfg.beams, params);
    } catch (const EmptyFrameError&) {
      continue;
    }
    for (const auto& g : pkg.gt) {
      if (g.heavily_occluded) continue;
      ++total_gt;
      for (const auto& p : proposals)
        if (box_iou(p.bbox, g.bbox) > 0.7) {
          ++matched;
          break;
        }
    }
  }
  REQUIRE(total_gt > 0);
  CHECK(static_cast<double>(matched) / total_gt > 0.8);
}

TEST_CASE("cloud file round-trip") {
  PointCloud cloud;
  cloud.frame_id = "rt";
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  for (int i = 0; i < 500; ++i)
    cloud.points.push_back({u(rng), u(rng), u(rng), std::abs(u(rng)) / 40.0});
  save_cloud(cloud, "cloud_rt.bin");
  const PointCloud loaded = load_cloud("cloud_rt.bin", "rt");
  REQUIRE(loaded.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(loaded.points[i].x == Catch::Approx(cloud.points[i].x).margin(1e-4));
    CHECK(loaded.points[i].z == Catch::Approx(cloud.points[i].z).margin(1e-4));
  }
  std::remove("cloud_rt.bin");
}

TEST_CASE("beam config round-trip and validation") {
  BeamConfig cfg = test_beams();
  save_beam_config(cfg, "beams_rt.txt");
  const BeamConfig loaded = load_beam_config("beams_rt.txt");
  CHECK(loaded.n_rows == cfg.n_rows);
  CHECK(loaded.elevation_angles == cfg.elevation_angles);
  std::remove("beams_rt.txt");

  BeamConfig bad = cfg;
  std::swap(bad.elevation_angles[0], bad.elevation_angles[1]);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
