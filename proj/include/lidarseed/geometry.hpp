#ifndef LIDARSEED_GEOMETRY_HPP
#define LIDARSEED_GEOMETRY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidarseed {

struct Point3 {
  double x = 0.0;  // forward, meters
  double y = 0.0;  // left
  double z = 0.0;  // up
  double intensity = 0.0;

  double range() const { return std::sqrt(x * x + y * y + z * z); }
};

struct PointCloud {
  std::vector<Point3> points;
  std::string frame_id;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

struct BBox2D {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  bool contains(double u, double v) const {
    return u >= x_min && u <= x_max && v >= y_min && v <= y_max;
  }
};

inline bool operator==(const BBox2D& a, const BBox2D& b) {
  return a.x_min == b.x_min && a.y_min == b.y_min && a.x_max == b.x_max &&
         a.y_max == b.y_max;
}

inline double box_iou(const BBox2D& a, const BBox2D& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// Rigid transform sensor frame -> camera frame. Camera frame convention:
// z forward (optical axis), x right, y down.
struct CameraModel {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  std::array<double, 3> translation{0, 0, 0};
  int width = 0;
  int height = 0;

  Point3 to_camera(const Point3& p) const {
    const auto& r = rotation;
    return {r[0] * p.x + r[1] * p.y + r[2] * p.z + translation[0],
            r[3] * p.x + r[4] * p.y + r[5] * p.z + translation[1],
            r[6] * p.x + r[7] * p.y + r[8] * p.z + translation[2],
            p.intensity};
  }

  void validate() const {
    if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("camera: fx, fy must be positive");
    // R orthonormal, det +1, checked to 1e-9
    const auto& r = rotation;
    auto dot = [&](int i, int j) {
      return r[3 * i] * r[3 * j] + r[3 * i + 1] * r[3 * j + 1] + r[3 * i + 2] * r[3 * j + 2];
    };
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (std::abs(dot(i, j) - (i == j ? 1.0 : 0.0)) > 1e-9)
          throw std::invalid_argument("camera: rotation not orthonormal");
    const double det =
        r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
        r[2] * (r[3] * r[7] - r[4] * r[6]);
    if (std::abs(det - 1.0) > 1e-9)
      throw std::invalid_argument("camera: rotation determinant != +1");
  }
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

constexpr double kMinDepth = 1e-6;  // meters; at or below counts as behind camera

// Pinhole projection. nullopt = behind camera.
inline std::optional<PixelCoord> project_point(const Point3& p, const CameraModel& cam) {
  const Point3 c = cam.to_camera(p);
  if (c.z <= kMinDepth) return std::nullopt;
  return PixelCoord{cam.fx * c.x / c.z + cam.cx, cam.fy * c.y / c.z + cam.cy};
}

constexpr int kMinVisiblePoints = 5;

// Axis-aligned hull of in-front projections, clipped to the image.
// nullopt = NotVisible (fewer than min_visible in-image points).
inline std::optional<BBox2D> segment_to_bbox(const std::vector<Point3>& seg,
                                             const CameraModel& cam,
                                             int min_visible = kMinVisiblePoints) {
  double u0 = 1e300, v0 = 1e300, u1 = -1e300, v1 = -1e300;
  int visible = 0;
  for (const auto& p : seg) {
    const auto px = project_point(p, cam);
    if (!px) continue;
    if (px->u < 0.0 || px->u > cam.width || px->v < 0.0 || px->v > cam.height) continue;
    ++visible;
    u0 = std::min(u0, px->u);
    v0 = std::min(v0, px->v);
    u1 = std::max(u1, px->u);
    v1 = std::max(v1, px->v);
  }
  if (visible < min_visible) return std::nullopt;
  BBox2D box{u0, v0, u1, v1};
  if (!box.valid()) return std::nullopt;
  return box;
}

struct ScoredBox {
  BBox2D bbox;
  double score = 0.0;
  int cluster_id = 0;
};

// Greedy NMS over all boxes regardless of cluster_id. Tie-break: score desc,
// then box coordinates lexicographic.
inline std::vector<ScoredBox> class_agnostic_nms(std::vector<ScoredBox> dets,
                                                 double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(), [](const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto ka = std::array<double, 4>{a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max};
    const auto kb = std::array<double, 4>{b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max};
    return ka < kb;
  });
  std::vector<ScoredBox> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (box_iou(d.bbox, k.bbox) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// Plain-text key-value calibration file: fx fy cx cy width height, R (9), t (3).
inline CameraModel load_camera(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open calibration file: " + path);
  CameraModel cam;
  std::string key;
  while (in >> key) {
    if (key == "fx") in >> cam.fx;
    else if (key == "fy") in >> cam.fy;
    else if (key == "cx") in >> cam.cx;
    else if (key == "cy") in >> cam.cy;
    else if (key == "width") in >> cam.width;
    else if (key == "height") in >> cam.height;
    else if (key == "R") for (auto& r : cam.rotation) in >> r;
    else if (key == "t") for (auto& t : cam.translation) in >> t;
    else throw std::runtime_error("unknown calibration key: " + key);
  }
  cam.validate();
  return cam;
}

inline void save_camera(const CameraModel& cam, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write calibration file: " + path);
  out.precision(17);
  out << "fx " << cam.fx << "\nfy " << cam.fy << "\ncx " << cam.cx << "\ncy " << cam.cy
      << "\nwidth " << cam.width << "\nheight " << cam.height << "\nR";
  for (double r : cam.rotation) out << ' ' << r;
  out << "\nt";
  for (double t : cam.translation) out << ' ' << t;
  out << '\n';
}

}  // namespace lidarseed

#endif  // LIDARSEED_GEOMETRY_HPP
