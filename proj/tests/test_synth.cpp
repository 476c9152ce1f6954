#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "lidarseed/synth.hpp"

using namespace lidarseed;

TEST_CASE("generate_scene zero objects") {
  std::mt19937_64 rng(1);
  const auto scene = generate_scene(default_catalog(), 1.5, 0, rng);
  CHECK(scene.objects.empty());
}

TEST_CASE("generate_scene zipf frequencies") {
  std::mt19937_64 rng(3);
  const auto catalog = default_catalog(10);
  std::map<int, int> counts;
  const int draws = 10000;
  // Count category draws through many small scenes.
  int total = 0;
  while (total < draws) {
    const auto scene = generate_scene(catalog, 1.5, 4, rng);
    for (const auto& o : scene.objects) {
      ++counts[o.category];
      ++total;
    }
  }
  const auto w = zipf_weights(10, 1.5);
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (int k = 1; k <= 5; ++k) {  // head categories have enough mass to test
    const double expected = w[k - 1] / wsum;
    const double observed = static_cast<double>(counts[k]) / total;
    CHECK(observed == Catch::Approx(expected).epsilon(0.10));
  }
}

TEST_CASE("placements are pairwise non-overlapping") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto scene = generate_scene(default_catalog(), 1.0, 8, rng);
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
      for (std::size_t j = i + 1; j < scene.objects.size(); ++j) {
        const auto& a = scene.objects[i];
        const auto& b = scene.objects[j];
        const double d = std::hypot(a.x - b.x, a.y - b.y);
        CHECK(d >= a.footprint_radius() + b.footprint_radius());
      }
  }
}

TEST_CASE("simulate_lidar ground-only scene") {
  SceneDescription scene;
  BeamConfig beams;
  beams.n_rows = 8;
  beams.n_cols = 90;
  beams.azimuth_fov = M_PI;
  for (int i = 0; i < 8; ++i)
    beams.elevation_angles.push_back((-15.0 + 1.5 * i) * M_PI / 180.0);
  std::mt19937_64 rng(7);
  const auto sweep = simulate_lidar(scene, beams, rng);
  REQUIRE(!sweep.cloud.empty());
  CHECK(sweep.cloud.size() <= static_cast<std::size_t>(beams.n_rows * beams.n_cols));
  for (int id : sweep.source_ids) CHECK(id == 0);
}

TEST_CASE("simulate_lidar box returns lie on the box surface") {
  SceneDescription scene;
  PlacedObject box;
  box.size = {2.0, 2.0, 2.0};
  box.x = 10.0;
  box.y = 0.0;
  box.yaw = 0.0;
  scene.objects.push_back(box);

  BeamConfig beams;
  beams.n_rows = 32;
  beams.n_cols = 360;
  beams.azimuth_fov = M_PI;
  for (int i = 0; i < 32; ++i)
    beams.elevation_angles.push_back((-20.0 + 1.0 * i) * M_PI / 180.0);

  std::mt19937_64 rng(9);
  const auto sweep = simulate_lidar(scene, beams, rng);
  int on_box = 0;
  for (std::size_t i = 0; i < sweep.cloud.size(); ++i) {
    if (sweep.source_ids[i] != 1) continue;
    ++on_box;
    const auto& p = sweep.cloud.points[i];
    // nearest face is x = 9; noise sigma 1 cm -> 4 sigma bound on face distance
    const double dx = std::min({std::abs(p.x - 9.0), std::abs(p.x - 11.0),
                                std::abs(p.y - 1.0), std::abs(p.y + 1.0),
                                std::abs(p.z - (-1.73)), std::abs(p.z - 0.27)});
    CHECK(dx <= 0.04);
  }
  CHECK(on_box > 20);
}

TEST_CASE("render_image empty scene has no GT") {
  SceneDescription scene;
  const auto r = render_image(scene, default_camera(), "f0");
  CHECK(r.gt.empty());
  CHECK(r.image.width == 320);
}

TEST_CASE("render_image box hull matches projected vertices") {
  SceneDescription scene;
  PlacedObject box;
  box.size = {2.0, 2.0, 2.0};
  box.x = 10.0;
  box.y = 0.0;
  box.yaw = 0.3;
  scene.objects.push_back(box);
  const CameraModel cam = default_camera();
  const auto r = render_image(scene, cam, "f0");
  REQUIRE(r.gt.size() == 1);
  CHECK_FALSE(r.gt[0].heavily_occluded);

  // project the 8 box corners and compare hulls
  double u0 = 1e300, v0 = 1e300, u1 = -1e300, v1 = -1e300;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  for (int corner = 0; corner < 8; ++corner) {
    const double lx = (corner & 1 ? 1.0 : -1.0) * box.size[0] / 2.0;
    const double ly = (corner & 2 ? 1.0 : -1.0) * box.size[1] / 2.0;
    const double lz = (corner & 4 ? box.size[2] : 0.0) + scene.ground_z;
    const Point3 p{box.x + c * lx - s * ly, box.y + s * lx + c * ly, lz, 0.0};
    const auto px = project_point(p, cam);
    REQUIRE(px);
    u0 = std::min(u0, px->u);
    v0 = std::min(v0, px->v);
    u1 = std::max(u1, px->u);
    v1 = std::max(v1, px->v);
  }
  CHECK(r.gt[0].bbox.x_min == Catch::Approx(u0).margin(1.5));
  CHECK(r.gt[0].bbox.y_min == Catch::Approx(v0).margin(1.5));
  CHECK(r.gt[0].bbox.x_max == Catch::Approx(u1).margin(1.5));
  CHECK(r.gt[0].bbox.y_max == Catch::Approx(v1).margin(1.5));
}

TEST_CASE("occluded objects are flagged") {
  SceneDescription scene;
  PlacedObject tiny;
  tiny.size = {0.15, 0.15, 0.15};
  tiny.x = 30.0;  // far away -> very few pixels
  tiny.y = 0.0;
  scene.objects.push_back(tiny);
  const auto r = render_image(scene, default_camera(), "f0");
  if (!r.gt.empty()) CHECK(r.gt[0].heavily_occluded);
}

TEST_CASE("png round-trip") {
  Image img(37, 23);
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(byte(rng));
  save_png(img, "png_rt.png");
  const Image loaded = load_png("png_rt.png");
  REQUIRE(loaded.width == img.width);
  REQUIRE(loaded.height == img.height);
  CHECK(loaded.pixels == img.pixels);
  std::remove("png_rt.png");
}

TEST_CASE("generate_dataset determinism and manifest") {
  namespace fs = std::filesystem;
  DatasetConfig cfg;
  cfg.beams.n_rows = 16;
  cfg.beams.n_cols = 180;
  cfg.beams.elevation_angles.clear();
  for (int i = 0; i < 16; ++i)
    cfg.beams.elevation_angles.push_back((-18.0 + 1.8 * i) * M_PI / 180.0);

  const std::string dir_a = "synth_a", dir_b = "synth_b";
  generate_dataset(4, cfg, 321, dir_a);
  generate_dataset(4, cfg, 321, dir_b);

  const auto manifest = load_manifest(dir_a);
  REQUIRE(manifest.size() == 4);
  for (const auto& e : manifest) {
    CHECK(fs::exists(e.cloud_path));
    CHECK(fs::exists(e.image_path));
    CHECK(fs::exists(e.ids_path));
    const auto cloud = load_cloud(e.cloud_path, e.frame_id);
    const auto ids = load_source_ids(e.ids_path);
    CHECK(cloud.size() == ids.size());
  }

  // bit-identical datasets under the same seed
  for (const std::string rel : {"clouds/000002.bin", "images/000001.png", "ground_truth.jsonl"}) {
    std::ifstream fa((fs::path(dir_a) / rel).string(), std::ios::binary);
    std::ifstream fb((fs::path(dir_b) / rel).string(), std::ios::binary);
    const std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
    CHECK(!ca.empty());
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}
