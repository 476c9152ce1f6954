#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lidarseed/features.hpp"

using namespace lidarseed;

namespace {

std::vector<Point3> rotate_z(const std::vector<Point3>& pts, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  std::vector<Point3> out;
  for (const auto& p : pts)
    out.push_back({c * p.x - s * p.y, s * p.x + c * p.y, p.z, p.intensity});
  return out;
}

}  // namespace

TEST_CASE("shape_descriptor degenerate single point") {
  const Eigen::VectorXd d = shape_descriptor({{1.0, 2.0, 3.0, 0.4}});
  CHECK(d.size() == kShapeDim);
  CHECK(d[0] == Catch::Approx(0.0));  // log 1
  CHECK(d[1] == Catch::Approx(3.0));  // centroid height
  CHECK(d.segment<3>(2).norm() == 0.0);  // extents
  CHECK(d.segment<3>(5).norm() == 0.0);  // eigenvalue guard
  CHECK(d[8] == Catch::Approx(0.4));
  CHECK(d.segment(9, 64).sum() == Catch::Approx(1.0));
  CHECK(d.segment(9, 64).maxCoeff() == Catch::Approx(1.0));  // single occupied cell
}

TEST_CASE("shape_descriptor invariant to up-axis rotation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Point3> pts;
  for (int i = 0; i < 300; ++i)
    pts.push_back({4.0 + u(rng) * 2.0, u(rng), 1.0 + 0.5 * u(rng) * u(rng), 0.3});

  const Eigen::VectorXd a = shape_descriptor(pts);
  const Eigen::VectorXd b = shape_descriptor(rotate_z(pts, M_PI / 2.0));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("shape_descriptor uniform cube is isotropic") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<Point3> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back({u(rng), u(rng), u(rng), 0.0});
  const Eigen::VectorXd d = shape_descriptor(pts);
  const Eigen::Vector3d eig = d.segment<3>(5);
  CHECK(eig[0] / eig[2] < 1.10);  // sampling noise at 10k points is a few percent
  CHECK(eig.sum() == Catch::Approx(1.0));
}

TEST_CASE("appearance_descriptor uniform gray patch") {
  Image img(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) img.set(x, y, 128, 128, 128);
  const Eigen::VectorXd d = appearance_descriptor(img, {8, 8, 56, 56});
  CHECK(d.size() == kAppearanceDim);
  CHECK(d.tail(36).norm() == 0.0);  // no gradients
  CHECK(d.head(128).sum() == Catch::Approx(1.0));
  CHECK(d.head(128).maxCoeff() == Catch::Approx(1.0));  // all mass in one bin
}

TEST_CASE("appearance_descriptor shift by resample stride") {
  Image img(128, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x) {
      // 2px-periodic texture so a 2px shift with a 64px/32-cell patch realigns
      const int v = ((x % 2) ? 160 : 40) + (y % 4) * 20;
      img.set(x, y, v, v / 2, 255 - v);
    }
  const Eigen::VectorXd a = appearance_descriptor(img, {0, 0, 64, 64});
  const Eigen::VectorXd b = appearance_descriptor(img, {2, 0, 66, 64});
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("appearance_descriptor vertical step edge") {
  Image img(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const int v = x < 32 ? 30 : 220;
      img.set(x, y, v, v, v);
    }
  const Eigen::VectorXd d = appearance_descriptor(img, {0, 0, 64, 64});
  // horizontal gradient -> orientation 0 -> first bin of each cell
  double first_bin = 0.0, total = 0.0;
  for (int cell = 0; cell < 4; ++cell) {
    first_bin += d[128 + cell * 9];
    total += d.segment(128 + cell * 9, 9).sum();
  }
  CHECK(first_bin / total >= 0.9);
}

TEST_CASE("appearance_descriptor degenerate patch") {
  Image img(64, 64);
  CHECK_THROWS_AS(appearance_descriptor(img, {0, 0, 1.0, 1.0}), DegeneratePatchError);
  CHECK_THROWS_AS(appearance_descriptor(img, {-10, -10, -1, -1}), DegeneratePatchError);
}

TEST_CASE("augment identity params keeps 1024-point input") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Point3> pts;
  for (int i = 0; i < 1024; ++i) pts.push_back({u(rng), u(rng), u(rng), 0.5});
  const auto out = augment_segment(pts, {0.0, false, 0.0, 1024}, rng);
  REQUIRE(out.size() == 1024);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].x == pts[i].x);
    CHECK(out[i].y == pts[i].y);
    CHECK(out[i].z == pts[i].z);
  }
}

TEST_CASE("augment max dropout keeps at least one point, pads to 1024") {
  std::mt19937_64 rng(13);
  std::vector<Point3> pts;
  for (int i = 0; i < 8; ++i) pts.push_back({double(i), 0.0, 0.0, 0.0});
  for (int trial = 0; trial < 50; ++trial) {
    const auto out = augment_segment(pts, {0.0, false, 0.875, 1024}, rng);
    CHECK(out.size() == 1024);
  }
}

TEST_CASE("rotation by pi is an involution") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<Point3> pts;
  for (int i = 0; i < 100; ++i) pts.push_back({u(rng), u(rng), u(rng), 0.1});
  auto once = augment_segment(pts, {M_PI, false, 0.0, 100}, rng);
  auto twice = augment_segment(once, {M_PI, false, 0.0, 100}, rng);
  // dropout 0 and matching target size keep order, so compare elementwise
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(twice[i].x == Catch::Approx(pts[i].x).margin(1e-9));
    CHECK(twice[i].y == Catch::Approx(pts[i].y).margin(1e-9));
  }
}

TEST_CASE("standardization properties") {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> g(2.0, 3.0);
  Eigen::MatrixXd rows(200, 5);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = g(rng);
  rows.col(3).setConstant(7.0);  // constant feature exercises the sigma floor

  const FeatureStats stats = FeatureStats::fit(rows);
  Eigen::MatrixXd z(rows.rows(), rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    z.row(i) = stats.apply(rows.row(i).transpose()).transpose();

  CHECK(z.colwise().mean().cwiseAbs().maxCoeff() < 1e-9);
  CHECK(z.col(3).cwiseAbs().maxCoeff() == 0.0);  // constant -> all-zero, no NaN
  CHECK(z.allFinite());
}

TEST_CASE("identical vectors standardize to zero") {
  Eigen::MatrixXd rows(10, 4);
  for (int i = 0; i < 10; ++i) rows.row(i) << 1.0, -2.0, 0.5, 9.0;
  const FeatureStats stats = FeatureStats::fit(rows);
  CHECK(stats.apply(rows.row(0).transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("feature matrix dump round-trip") {
  Eigen::MatrixXd rows(13, 7);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = u(rng);
  save_feature_matrix(rows, "features_rt.bin");
  const Eigen::MatrixXd loaded = load_feature_matrix("features_rt.bin");
  REQUIRE(loaded.rows() == rows.rows());
  REQUIRE(loaded.cols() == rows.cols());
  CHECK((loaded - rows).cwiseAbs().maxCoeff() < 1e-5);  // float32 storage
  std::remove("features_rt.bin");
}

TEST_CASE("feature stats file round-trip") {
  FeatureStats s;
  s.mean = Eigen::Vector3d(1.0, -2.0, 0.25);
  s.stddev = Eigen::Vector3d(0.5, 2.0, 1.0);
  save_feature_stats(s, "stats_rt.txt");
  const FeatureStats loaded = load_feature_stats("stats_rt.txt");
  CHECK((loaded.mean - s.mean).norm() == 0.0);
  CHECK((loaded.stddev - s.stddev).norm() == 0.0);
  std::remove("stats_rt.txt");
}
