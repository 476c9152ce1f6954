#ifndef LIDARSEED_FEATURES_HPP
#define LIDARSEED_FEATURES_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarseed/geometry.hpp"
#include "lidarseed/image.hpp"

namespace lidarseed {

constexpr int kShapeDim = 73;
constexpr int kAppearanceDim = 164;
constexpr int kFeatureDim = kShapeDim + kAppearanceDim;

struct DegeneratePatchError : std::runtime_error {
  DegeneratePatchError() : std::runtime_error("clipped box patch area below 4 px^2") {}
};

namespace detail {

// PCA basis with a moment-based sign convention so the frame is stable under
// rigid motion of the segment.
struct PcaFrame {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();  // rows = principal axes
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();  // descending
};

inline PcaFrame pca_frame(const std::vector<Point3>& pts) {
  PcaFrame f;
  const double n = static_cast<double>(pts.size());
  for (const auto& p : pts) f.centroid += Eigen::Vector3d(p.x, p.y, p.z);
  f.centroid /= n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector3d d = Eigen::Vector3d(p.x, p.y, p.z) - f.centroid;
    cov += d * d.transpose();
  }
  cov /= n;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  // solver returns ascending order; flip to descending
  for (int i = 0; i < 3; ++i) {
    f.eigenvalues[i] = std::max(0.0, solver.eigenvalues()[2 - i]);
    f.axes.row(i) = solver.eigenvectors().col(2 - i).transpose();
  }
  // Sign convention: positive third moment along each axis (fall back to +).
  for (int i = 0; i < 3; ++i) {
    double skew = 0.0;
    for (const auto& p : pts) {
      const double t = f.axes.row(i).dot(Eigen::Vector3d(p.x, p.y, p.z) - f.centroid);
      skew += t * t * t;
    }
    if (skew < 0.0) f.axes.row(i) = -f.axes.row(i);
  }
  return f;
}

}  // namespace detail

// 73-d deterministic 3D shape descriptor:
//   log point count (1) | centroid height (1) | PCA-frame extents (3) |
//   sorted normalized eigenvalues (3) | mean intensity (1) |
//   4x4x4 occupancy histogram over the PCA-aligned unit cube, L1-normalized (64)
inline Eigen::VectorXd shape_descriptor(const std::vector<Point3>& pts) {
  if (pts.empty()) throw std::invalid_argument("shape_descriptor: empty segment");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(kShapeDim);
  const auto frame = detail::pca_frame(pts);

  out[0] = std::log(static_cast<double>(pts.size()));
  out[1] = frame.centroid.z();

  // Extents and normalized occupancy coordinates in the PCA frame.
  Eigen::Vector3d lo(1e300, 1e300, 1e300), hi(-1e300, -1e300, -1e300);
  std::vector<Eigen::Vector3d> local;
  local.reserve(pts.size());
  for (const auto& p : pts) {
    const Eigen::Vector3d q =
        frame.axes * (Eigen::Vector3d(p.x, p.y, p.z) - frame.centroid);
    local.push_back(q);
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  const Eigen::Vector3d extent = hi - lo;
  out.segment<3>(2) = extent;

  const double eig_sum = frame.eigenvalues.sum();
  if (eig_sum > 1e-12) out.segment<3>(5) = frame.eigenvalues / eig_sum;

  double mean_intensity = 0.0;
  for (const auto& p : pts) mean_intensity += p.intensity;
  out[8] = mean_intensity / static_cast<double>(pts.size());

  for (const auto& q : local) {
    int bin[3];
    for (int a = 0; a < 3; ++a) {
      if (extent[a] <= 1e-12) {
        bin[a] = 0;
      } else {
        const double t = (q[a] - lo[a]) / extent[a];
        bin[a] = std::min(3, static_cast<int>(t * 4.0));
      }
    }
    out[9 + bin[0] * 16 + bin[1] * 4 + bin[2]] += 1.0;
  }
  out.segment(9, 64) /= static_cast<double>(pts.size());
  return out;
}

namespace detail {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  v = mx;
  const double d = mx - mn;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) h = std::fmod((g - b) / d + 6.0, 6.0);
  else if (mx == g) h = (b - r) / d + 2.0;
  else h = (r - g) / d + 4.0;
  h /= 6.0;  // [0,1)
}

}  // namespace detail

// 164-d 2D appearance descriptor over the image patch inside bbox:
//   HSV histogram 8x4x4, L1-normalized (128) |
//   gradient orientation histogram, 9 bins x 2x2 cells, L2 per cell (36)
inline Eigen::VectorXd appearance_descriptor(const Image& image, const BBox2D& bbox) {
  BBox2D box{std::max(bbox.x_min, 0.0), std::max(bbox.y_min, 0.0),
             std::min(bbox.x_max, static_cast<double>(image.width)),
             std::min(bbox.y_max, static_cast<double>(image.height))};
  if (!box.valid() || box.area() < 4.0) throw DegeneratePatchError{};

  constexpr int kPatch = 32;
  // Point-sample at cell centers.
  double patch[kPatch][kPatch][3];
  for (int py = 0; py < kPatch; ++py) {
    for (int px = 0; px < kPatch; ++px) {
      const double u = box.x_min + (px + 0.5) / kPatch * box.width();
      const double v = box.y_min + (py + 0.5) / kPatch * box.height();
      const int ix = std::clamp(static_cast<int>(u), 0, image.width - 1);
      const int iy = std::clamp(static_cast<int>(v), 0, image.height - 1);
      const std::uint8_t* rgb = image.at(ix, iy);
      for (int c = 0; c < 3; ++c) patch[py][px][c] = rgb[c] / 255.0;
    }
  }

  Eigen::VectorXd out = Eigen::VectorXd::Zero(kAppearanceDim);

  for (int py = 0; py < kPatch; ++py) {
    for (int px = 0; px < kPatch; ++px) {
      double h, s, v;
      detail::rgb_to_hsv(patch[py][px][0], patch[py][px][1], patch[py][px][2], h, s, v);
      const int hb = std::min(7, static_cast<int>(h * 8.0));
      const int sb = std::min(3, static_cast<int>(s * 4.0));
      const int vb = std::min(3, static_cast<int>(v * 4.0));
      out[hb * 16 + sb * 4 + vb] += 1.0;
    }
  }
  out.head(128) /= static_cast<double>(kPatch * kPatch);

  // Unsigned gradient orientations on luminance, central differences.
  double gray[kPatch][kPatch];
  for (int py = 0; py < kPatch; ++py)
    for (int px = 0; px < kPatch; ++px)
      gray[py][px] = 0.299 * patch[py][px][0] + 0.587 * patch[py][px][1] +
                     0.114 * patch[py][px][2];

  for (int py = 1; py < kPatch - 1; ++py) {
    for (int px = 1; px < kPatch - 1; ++px) {
      const double gx = gray[py][px + 1] - gray[py][px - 1];
      const double gy = gray[py + 1][px] - gray[py - 1][px];
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag <= 0.0) continue;
      double ang = std::atan2(gy, gx);
      if (ang < 0.0) ang += M_PI;  // unsigned, [0, pi)
      if (ang >= M_PI) ang -= M_PI;
      const int bin = std::min(8, static_cast<int>(ang / M_PI * 9.0));
      const int cell = (py < kPatch / 2 ? 0 : 2) + (px < kPatch / 2 ? 0 : 1);
      out[128 + cell * 9 + bin] += mag;
    }
  }
  for (int cell = 0; cell < 4; ++cell) {
    const double norm = out.segment(128 + cell * 9, 9).norm();
    if (norm > 1e-12) out.segment(128 + cell * 9, 9) /= norm;
  }
  return out;
}

// --- augmentations -----------------------------------------------------------

constexpr int kAugmentTargetPoints = 1024;
constexpr double kMaxDropoutRate = 0.875;

struct AugmentParams {
  double rotation_angle = 0.0;  // radians, about the up-axis
  bool flip = false;            // mirror across the x-z plane
  double dropout_rate = 0.0;
  int target_points = kAugmentTargetPoints;
};

inline AugmentParams random_augment_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> drop(0.0, kMaxDropoutRate);
  std::bernoulli_distribution coin(0.5);
  return {angle(rng), coin(rng), drop(rng), kAugmentTargetPoints};
}

// Rotate, optionally mirror, Bernoulli-drop (at least one survivor), then
// resample with replacement to exactly target_points.
inline std::vector<Point3> augment_segment(const std::vector<Point3>& pts,
                                           const AugmentParams& params,
                                           std::mt19937_64& rng) {
  if (pts.empty()) throw std::invalid_argument("augment_segment: empty segment");
  if (params.dropout_rate < 0.0 || params.dropout_rate > kMaxDropoutRate)
    throw std::invalid_argument("augment_segment: dropout_rate out of range");

  const double ca = std::cos(params.rotation_angle);
  const double sa = std::sin(params.rotation_angle);
  std::vector<Point3> transformed;
  transformed.reserve(pts.size());
  for (const auto& p : pts) {
    Point3 q{ca * p.x - sa * p.y, sa * p.x + ca * p.y, p.z, p.intensity};
    if (params.flip) q.y = -q.y;
    transformed.push_back(q);
  }

  std::vector<Point3> survivors;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& p : transformed)
    if (unit(rng) >= params.dropout_rate) survivors.push_back(p);
  if (survivors.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, transformed.size() - 1);
    survivors.push_back(transformed[pick(rng)]);
  }

  if (static_cast<int>(survivors.size()) == params.target_points) return survivors;
  std::vector<Point3> out;
  out.reserve(params.target_points);
  std::uniform_int_distribution<std::size_t> pick(0, survivors.size() - 1);
  for (int i = 0; i < params.target_points; ++i) out.push_back(survivors[pick(rng)]);
  return out;
}

// --- standardization ---------------------------------------------------------

constexpr double kSigmaFloor = 1e-12;

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // floored to 1 where < kSigmaFloor

  static FeatureStats fit(const Eigen::MatrixXd& rows) {
    if (rows.rows() == 0) throw std::invalid_argument("FeatureStats: no rows");
    FeatureStats s;
    s.mean = rows.colwise().mean();
    Eigen::VectorXd var =
        (rows.rowwise() - s.mean.transpose()).array().square().colwise().mean();
    s.stddev = var.array().sqrt();
    for (int i = 0; i < s.stddev.size(); ++i)
      if (s.stddev[i] < kSigmaFloor) s.stddev[i] = 1.0;
    return s;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    return (v - mean).cwiseQuotient(stddev);
  }
};

inline void save_feature_stats(const FeatureStats& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write feature stats: " + path);
  out.precision(17);
  out << s.mean.size() << '\n';
  for (int i = 0; i < s.mean.size(); ++i) out << s.mean[i] << ' ' << s.stddev[i] << '\n';
}

inline FeatureStats load_feature_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open feature stats: " + path);
  int dim = 0;
  in >> dim;
  FeatureStats s;
  s.mean.resize(dim);
  s.stddev.resize(dim);
  for (int i = 0; i < dim; ++i) in >> s.mean[i] >> s.stddev[i];
  return s;
}

// --- feature dumps -----------------------------------------------------------

// One text header line "dim count", then count binary little-endian float32
// rows of length dim.
inline void save_feature_matrix(const Eigen::MatrixXd& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature dump: " + path);
  out << rows.cols() << ' ' << rows.rows() << '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      const float f = static_cast<float>(rows(r, c));
      out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
  }
}

inline Eigen::MatrixXd load_feature_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature dump: " + path);
  Eigen::Index dim = 0, count = 0;
  in >> dim >> count;
  in.ignore(1, '\n');
  Eigen::MatrixXd rows(count, dim);
  for (Eigen::Index r = 0; r < count; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      float f = 0.0f;
      if (!in.read(reinterpret_cast<char*>(&f), sizeof(f)))
        throw std::runtime_error("truncated feature dump: " + path);
      rows(r, c) = f;
    }
  }
  return rows;
}

}  // namespace lidarseed

#endif  // LIDARSEED_FEATURES_HPP
