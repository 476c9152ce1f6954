#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lidarseed/geometry.hpp"

using namespace lidarseed;

namespace {

BBox2D random_box(std::mt19937_64& rng, double span = 100.0) {
  std::uniform_real_distribution<double> u(0.0, span);
  const double x0 = u(rng), y0 = u(rng);
  std::uniform_real_distribution<double> s(1.0, span / 2.0);
  return {x0, y0, x0 + s(rng), y0 + s(rng)};
}

// O(n^2) reference NMS with the same ordering rule.
std::vector<ScoredBox> reference_nms(std::vector<ScoredBox> dets, double thr) {
  std::stable_sort(dets.begin(), dets.end(), [](const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto ka = std::array<double, 4>{a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max};
    const auto kb = std::array<double, 4>{b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max};
    return ka < kb;
  });
  std::vector<bool> dead(dets.size(), false);
  std::vector<ScoredBox> kept;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dead[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j)
      if (!dead[j] && box_iou(dets[i].bbox, dets[j].bbox) > thr) dead[j] = true;
  }
  return kept;
}

CameraModel simple_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 50.0;
  cam.width = cam.height = 100;
  // identity rotation: sensor frame already is the camera frame here
  return cam;
}

}  // namespace

TEST_CASE("box_iou basics") {
  const BBox2D b{0, 0, 10, 10};
  CHECK(box_iou(b, b) == Catch::Approx(1.0));
  CHECK(box_iou({0, 0, 10, 10}, {20, 20, 30, 30}) == 0.0);
  CHECK(box_iou({0, 0, 10, 10}, {5, 0, 15, 10}) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("box_iou symmetry and bounds") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const BBox2D a = random_box(rng), b = random_box(rng);
    const double iou = box_iou(a, b);
    CHECK(iou == box_iou(b, a));
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);
  }
}

TEST_CASE("project_point pinhole") {
  const CameraModel cam = simple_camera();
  const auto on_axis = project_point({0, 0, 1}, cam);
  REQUIRE(on_axis);
  CHECK(on_axis->u == Catch::Approx(cam.cx));
  CHECK(on_axis->v == Catch::Approx(cam.cy));

  CHECK_FALSE(project_point({0, 0, 0}, cam));
  CHECK_FALSE(project_point({0, 0, -3}, cam));

  const auto px = project_point({1, 0, 2}, cam);
  REQUIRE(px);
  CHECK(px->u == Catch::Approx(100.0));
  CHECK(px->v == Catch::Approx(50.0));
}

TEST_CASE("segment_to_bbox visibility rules") {
  const CameraModel cam = simple_camera();

  CHECK_FALSE(segment_to_bbox({{0, 0, 1}}, cam));  // below min_visible_points

  std::vector<Point3> behind;
  for (int i = 0; i < 10; ++i) behind.push_back({0.1 * i, 0.0, -1.0});
  CHECK_FALSE(segment_to_bbox(behind, cam));
}

TEST_CASE("segment_to_bbox equals per-point projection hull") {
  const CameraModel cam = simple_camera();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.15, 0.15);
  std::vector<Point3> cube;
  for (int i = 0; i < 200; ++i) cube.push_back({u(rng), u(rng), 2.0 + u(rng)});

  const auto box = segment_to_bbox(cube, cam);
  REQUIRE(box);
  double u0 = 1e300, v0 = 1e300, u1 = -1e300, v1 = -1e300;
  int in_image = 0;
  for (const auto& p : cube) {
    const auto px = project_point(p, cam);
    REQUIRE(px);
    if (px->u < 0 || px->u > cam.width || px->v < 0 || px->v > cam.height) continue;
    ++in_image;
    u0 = std::min(u0, px->u);
    v0 = std::min(v0, px->v);
    u1 = std::max(u1, px->u);
    v1 = std::max(v1, px->v);
    CHECK(box->contains(px->u, px->v));
  }
  CHECK(in_image >= 5);
  CHECK(box->x_min == Catch::Approx(u0));
  CHECK(box->y_min == Catch::Approx(v0));
  CHECK(box->x_max == Catch::Approx(u1));
  CHECK(box->y_max == Catch::Approx(v1));
}

TEST_CASE("nms basics") {
  const ScoredBox a{{0, 0, 10, 10}, 0.9, 1};
  CHECK(class_agnostic_nms({a}, 0.3).size() == 1);

  const ScoredBox b{{0, 0, 10, 10}, 0.8, 2};
  const auto kept = class_agnostic_nms({b, a}, 0.3);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
}

TEST_CASE("nms matches brute-force reference and is idempotent") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::vector<ScoredBox> dets;
  for (int i = 0; i < 50; ++i) dets.push_back({random_box(rng, 60.0), score(rng), i % 5});

  const auto fast = class_agnostic_nms(dets, 0.3);
  const auto ref = reference_nms(dets, 0.3);
  REQUIRE(fast.size() == ref.size());
  for (std::size_t i = 0; i < fast.size(); ++i) {
    CHECK(fast[i].bbox == ref[i].bbox);
    CHECK(fast[i].score == ref[i].score);
  }

  for (std::size_t i = 0; i < fast.size(); ++i)
    for (std::size_t j = i + 1; j < fast.size(); ++j)
      CHECK(box_iou(fast[i].bbox, fast[j].bbox) <= 0.3);

  const auto twice = class_agnostic_nms(fast, 0.3);
  REQUIRE(twice.size() == fast.size());
  for (std::size_t i = 0; i < fast.size(); ++i) CHECK(twice[i].bbox == fast[i].bbox);
}

TEST_CASE("camera calibration file round-trip") {
  CameraModel cam = simple_camera();
  cam.rotation = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  cam.translation = {0.1, -0.2, 0.3};
  const std::string path = "calib_test.txt";
  save_camera(cam, path);
  const CameraModel loaded = load_camera(path);
  CHECK(loaded.fx == cam.fx);
  CHECK(loaded.rotation == cam.rotation);
  CHECK(loaded.translation == cam.translation);
  CHECK(loaded.width == cam.width);
  std::remove(path.c_str());
}

TEST_CASE("camera validation rejects bad rotation") {
  CameraModel cam = simple_camera();
  cam.rotation = {1, 0, 0, 0, 1, 0, 0, 0, -1};  // det -1
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}
