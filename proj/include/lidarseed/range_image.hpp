#ifndef LIDARSEED_RANGE_IMAGE_HPP
#define LIDARSEED_RANGE_IMAGE_HPP

#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarseed/geometry.hpp"

namespace lidarseed {

struct BeamConfig {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<double> elevation_angles;  // radians, ascending, size n_rows
  double azimuth_fov = 2.0 * M_PI;       // centered on +x

  void validate() const {
    if (n_rows <= 0 || static_cast<int>(elevation_angles.size()) != n_rows)
      throw std::invalid_argument("beam config: elevation_angles size mismatch");
    if (n_cols < 8) throw std::invalid_argument("beam config: n_cols must be >= 8");
    for (int i = 1; i < n_rows; ++i)
      if (elevation_angles[i] <= elevation_angles[i - 1])
        throw std::invalid_argument("beam config: elevation angles must be ascending");
    if (azimuth_fov <= 0.0 || azimuth_fov > 2.0 * M_PI + 1e-9)
      throw std::invalid_argument("beam config: azimuth_fov out of range");
  }

  double azimuth_step() const { return azimuth_fov / n_cols; }
};

constexpr int kNoReturn = -1;

struct RangeImage {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<double> ranges;     // row-major, 0 = no return
  std::vector<int> point_index;   // kNoReturn where empty
  std::size_t skipped_points = 0; // outside elevation/azimuth raster

  double& range_at(int r, int c) { return ranges[r * n_cols + c]; }
  double range_at(int r, int c) const { return ranges[r * n_cols + c]; }
  int& index_at(int r, int c) { return point_index[r * n_cols + c]; }
  int index_at(int r, int c) const { return point_index[r * n_cols + c]; }
  bool occupied(int r, int c) const { return index_at(r, c) != kNoReturn; }
};

// Spherical raster. Row = nearest elevation bin (points further than half the
// local bin spacing from every bin are skipped and counted). Collisions keep
// the nearer return, ties the lower point index.
inline RangeImage build_range_image(const PointCloud& cloud, const BeamConfig& cfg) {
  cfg.validate();
  if (cloud.empty()) throw std::invalid_argument("build_range_image: empty cloud");
  RangeImage ri;
  ri.n_rows = cfg.n_rows;
  ri.n_cols = cfg.n_cols;
  ri.ranges.assign(static_cast<std::size_t>(cfg.n_rows) * cfg.n_cols, 0.0);
  ri.point_index.assign(ri.ranges.size(), kNoReturn);

  const double half_fov = cfg.azimuth_fov / 2.0;
  for (int i = 0; i < static_cast<int>(cloud.points.size()); ++i) {
    const Point3& p = cloud.points[i];
    const double rng = p.range();
    if (rng <= 0.0) { ++ri.skipped_points; continue; }
    const double elev = std::asin(p.z / rng);

    int row = -1;
    double best = 1e300;
    for (int r = 0; r < cfg.n_rows; ++r) {
      const double d = std::abs(elev - cfg.elevation_angles[r]);
      if (d < best) { best = d; row = r; }
    }
    double spacing;
    if (cfg.n_rows == 1) {
      spacing = cfg.azimuth_step();  // lone beam: reuse azimuth step as tolerance
    } else if (row == 0) {
      spacing = cfg.elevation_angles[1] - cfg.elevation_angles[0];
    } else if (row == cfg.n_rows - 1) {
      spacing = cfg.elevation_angles[row] - cfg.elevation_angles[row - 1];
    } else {
      spacing = std::min(cfg.elevation_angles[row + 1] - cfg.elevation_angles[row],
                         cfg.elevation_angles[row] - cfg.elevation_angles[row - 1]);
    }
    if (best > 0.5 * spacing) { ++ri.skipped_points; continue; }

    const double az = std::atan2(p.y, p.x);
    if (az < -half_fov || az >= half_fov) { ++ri.skipped_points; continue; }
    int col = static_cast<int>((az + half_fov) / cfg.azimuth_step());
    if (col >= cfg.n_cols) col = cfg.n_cols - 1;

    const int cur = ri.index_at(row, col);
    if (cur == kNoReturn || rng < ri.range_at(row, col) ||
        (rng == ri.range_at(row, col) && i < cur)) {
      ri.range_at(row, col) = rng;
      ri.index_at(row, col) = i;
    }
  }
  return ri;
}

// Per-column ground chain from the lowest occupied row. A pixel joins the
// ground when the inclination of the displacement to the previous ground pixel
// is below the threshold; the chain stops at the first non-ground pixel.
inline std::vector<bool> remove_ground(const RangeImage& ri, const PointCloud& cloud,
                                       double ground_angle_deg) {
  if (ground_angle_deg <= 0.0 || ground_angle_deg > 45.0)
    throw std::invalid_argument("remove_ground: ground_angle_deg must be in (0, 45]");
  const double thr = ground_angle_deg * M_PI / 180.0;
  std::vector<bool> ground(ri.ranges.size(), false);

  for (int c = 0; c < ri.n_cols; ++c) {
    int prev = -1;  // row of the previous ground pixel in this column
    for (int r = 0; r < ri.n_rows; ++r) {
      if (!ri.occupied(r, c)) continue;
      const Point3& cur = cloud.points[ri.index_at(r, c)];
      if (prev < 0) {
        // Seed: the lowest return is ground only if the step to the next
        // occupied pixel above is also flat.
        int next = -1;
        for (int r2 = r + 1; r2 < ri.n_rows; ++r2)
          if (ri.occupied(r2, c)) { next = r2; break; }
        if (next < 0) break;  // single return, no evidence
        const Point3& up = cloud.points[ri.index_at(next, c)];
        const double dx = up.x - cur.x, dy = up.y - cur.y, dz = up.z - cur.z;
        const double incl = std::atan2(std::abs(dz), std::sqrt(dx * dx + dy * dy));
        if (incl >= thr) break;
        ground[r * ri.n_cols + c] = true;
        prev = r;
        continue;
      }
      const Point3& prv = cloud.points[ri.index_at(prev, c)];
      const double dx = cur.x - prv.x, dy = cur.y - prv.y, dz = cur.z - prv.z;
      const double incl = std::atan2(std::abs(dz), std::sqrt(dx * dx + dy * dy));
      if (incl >= thr) break;
      ground[r * ri.n_cols + c] = true;
      prev = r;
    }
  }
  return ground;
}

// Angle criterion for two neighboring returns d1 >= d2 separated by angular
// step psi: merge when atan2(d2 sin psi, d1 - d2 cos psi) exceeds the
// threshold (locally continuous surface).
inline bool angle_criterion_merge(double da, double db, double psi, double beta_thr_rad) {
  const double d1 = std::max(da, db);
  const double d2 = std::min(da, db);
  const double beta = std::atan2(d2 * std::sin(psi), d1 - d2 * std::cos(psi));
  return beta > beta_thr_rad;
}

// BFS flood over the 4-neighborhood of occupied non-ground pixels.
// Returns point-index sets in deterministic row-major discovery order.
inline std::vector<std::vector<int>> segment_range_image(
    const RangeImage& ri, const std::vector<bool>& ground, const BeamConfig& cfg,
    double beta_deg, int min_segment_points, bool wrap_azimuth = false) {
  if (beta_deg <= 0.0 || beta_deg >= 90.0)
    throw std::invalid_argument("segment_range_image: beta_deg must be in (0, 90)");
  if (min_segment_points < 1)
    throw std::invalid_argument("segment_range_image: min_segment_points must be >= 1");
  const double beta_thr = beta_deg * M_PI / 180.0;
  const double az_step = cfg.azimuth_step();

  std::vector<int> comp(ri.ranges.size(), -1);
  std::vector<std::vector<int>> segments;

  auto usable = [&](int r, int c) {
    const std::size_t k = static_cast<std::size_t>(r) * ri.n_cols + c;
    return ri.occupied(r, c) && !ground[k] && comp[k] < 0;
  };

  for (int r0 = 0; r0 < ri.n_rows; ++r0) {
    for (int c0 = 0; c0 < ri.n_cols; ++c0) {
      if (!usable(r0, c0)) continue;
      const int id = static_cast<int>(segments.size());
      std::vector<int> members;
      std::deque<std::pair<int, int>> queue{{r0, c0}};
      comp[r0 * ri.n_cols + c0] = id;
      while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop_front();
        members.push_back(ri.index_at(r, c));
        const double d_here = ri.range_at(r, c);

        auto try_neighbor = [&](int rn, int cn, double psi) {
          if (rn < 0 || rn >= ri.n_rows) return;
          if (cn < 0 || cn >= ri.n_cols) {
            if (!wrap_azimuth) return;
            cn = (cn + ri.n_cols) % ri.n_cols;
          }
          if (!usable(rn, cn)) return;
          if (!angle_criterion_merge(d_here, ri.range_at(rn, cn), psi, beta_thr)) return;
          comp[rn * ri.n_cols + cn] = id;
          queue.emplace_back(rn, cn);
        };

        if (r > 0)
          try_neighbor(r - 1, c, cfg.elevation_angles[r] - cfg.elevation_angles[r - 1]);
        if (r + 1 < ri.n_rows)
          try_neighbor(r + 1, c, cfg.elevation_angles[r + 1] - cfg.elevation_angles[r]);
        try_neighbor(r, c - 1, az_step);
        try_neighbor(r, c + 1, az_step);
      }
      segments.push_back(std::move(members));
    }
  }

  std::vector<std::vector<int>> kept;
  for (auto& s : segments) {
    if (static_cast<int>(s.size()) < min_segment_points) continue;
    std::sort(s.begin(), s.end());
    kept.push_back(std::move(s));
  }
  return kept;
}

struct SegmentProposal {
  int segment_id = 0;
  std::vector<int> point_indices;  // sorted indices into the frame cloud
  BBox2D bbox;
  std::string frame_id;
};

struct SegmentationParams {
  double ground_angle_deg = 10.0;
  double beta_deg = 10.0;
  int min_segment_points = 20;
  int min_visible_points = kMinVisiblePoints;
  bool wrap_azimuth = false;
};

struct EmptyFrameError : std::runtime_error {
  explicit EmptyFrameError(const std::string& frame)
      : std::runtime_error("no segment proposals survived in frame " + frame) {}
};

inline std::vector<Point3> gather_points(const PointCloud& cloud,
                                         const std::vector<int>& indices) {
  std::vector<Point3> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(cloud.points[i]);
  return out;
}

inline std::vector<SegmentProposal> extract_segments(const PointCloud& cloud,
                                                     const CameraModel& cam,
                                                     const BeamConfig& beams,
                                                     const SegmentationParams& params) {
  const RangeImage ri = build_range_image(cloud, beams);
  const auto ground = remove_ground(ri, cloud, params.ground_angle_deg);
  const auto index_sets =
      segment_range_image(ri, ground, beams, params.beta_deg, params.min_segment_points,
                          params.wrap_azimuth);

  std::vector<SegmentProposal> proposals;
  int next_id = 0;
  for (const auto& indices : index_sets) {
    const auto box = segment_to_bbox(gather_points(cloud, indices), cam,
                                     params.min_visible_points);
    if (!box) continue;
    proposals.push_back({next_id++, indices, *box, cloud.frame_id});
  }
  if (proposals.empty()) throw EmptyFrameError(cloud.frame_id);
  return proposals;
}

// --- file formats -----------------------------------------------------------

// Binary little-endian float32 (x, y, z, intensity) quadruples, one frame per
// file (KITTI velodyne layout).
inline void save_cloud(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write cloud file: " + path);
  for (const auto& p : cloud.points) {
    const float vals[4] = {static_cast<float>(p.x), static_cast<float>(p.y),
                           static_cast<float>(p.z), static_cast<float>(p.intensity)};
    out.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  }
}

inline PointCloud load_cloud(const std::string& path, const std::string& frame_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cloud file: " + path);
  PointCloud cloud;
  cloud.frame_id = frame_id;
  float vals[4];
  while (in.read(reinterpret_cast<char*>(vals), sizeof(vals)))
    cloud.points.push_back({vals[0], vals[1], vals[2], vals[3]});
  return cloud;
}

inline void save_beam_config(const BeamConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write beam config: " + path);
  out.precision(17);
  out << "n_rows " << cfg.n_rows << "\nn_cols " << cfg.n_cols << "\nazimuth_fov "
      << cfg.azimuth_fov << "\nelevation_angles";
  for (double e : cfg.elevation_angles) out << ' ' << e;
  out << '\n';
}

inline BeamConfig load_beam_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open beam config: " + path);
  BeamConfig cfg;
  std::string key;
  while (in >> key) {
    if (key == "n_rows") in >> cfg.n_rows;
    else if (key == "n_cols") in >> cfg.n_cols;
    else if (key == "azimuth_fov") in >> cfg.azimuth_fov;
    else if (key == "elevation_angles") {
      cfg.elevation_angles.resize(cfg.n_rows);
      for (auto& e : cfg.elevation_angles) in >> e;
    } else throw std::runtime_error("unknown beam config key: " + key);
  }
  cfg.validate();
  return cfg;
}

}  // namespace lidarseed

#endif  // LIDARSEED_RANGE_IMAGE_HPP
