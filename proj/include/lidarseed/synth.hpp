#ifndef LIDARSEED_SYNTH_HPP
#define LIDARSEED_SYNTH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarseed/eval.hpp"
#include "lidarseed/geometry.hpp"
#include "lidarseed/image.hpp"
#include "lidarseed/pseudo.hpp"
#include "lidarseed/range_image.hpp"

namespace lidarseed {

enum class ShapeKind { box, cylinder, capsule };

struct ObjectTemplate {
  ShapeKind shape = ShapeKind::box;
  std::array<double, 3> size_min{1, 1, 1};  // x, y, z extents (diameter for radius)
  std::array<double, 3> size_max{1, 1, 1};
  std::array<double, 3> albedo{0.5, 0.5, 0.5};
  int category = 1;
  int subgroup = 0;
};

struct PlacedObject {
  ShapeKind shape = ShapeKind::box;
  std::array<double, 3> size{1, 1, 1};
  std::array<double, 3> albedo{0.5, 0.5, 0.5};
  int category = 1;
  int subgroup = 0;
  double x = 0.0, y = 0.0;  // footprint center on the ground
  double yaw = 0.0;

  double footprint_radius() const {
    return 0.5 * std::sqrt(size[0] * size[0] + size[1] * size[1]);
  }
};

struct SceneDescription {
  std::vector<PlacedObject> objects;
  double ground_z = -1.73;  // sensor sits at the frame origin
  std::array<double, 3> ground_albedo{0.35, 0.33, 0.30};
};

struct ScenePackage {
  PointCloud cloud;
  std::vector<int> source_ids;  // per point; 0 = ground, i+1 = objects[i]
  Image image;
  std::vector<GroundTruthBox> gt;
  CameraModel camera;
  std::uint64_t seed = 0;
};

// Catalog with a long-tailed category set; head categories carry several
// pose/size subgroups so many clusters can legitimately map to one category.
inline std::vector<ObjectTemplate> default_catalog(int n_categories = 10,
                                                   int head_subgroups = 3) {
  std::vector<ObjectTemplate> catalog;
  const std::array<ShapeKind, 3> shapes{ShapeKind::box, ShapeKind::cylinder,
                                        ShapeKind::capsule};
  for (int cat = 1; cat <= n_categories; ++cat) {
    const ShapeKind shape = shapes[(cat - 1) % 3];
    const double base = 0.8 + 0.35 * ((cat - 1) % 5);
    const int n_sub = cat <= 3 ? head_subgroups : 1;
    for (int sub = 0; sub < n_sub; ++sub) {
      ObjectTemplate t;
      t.shape = shape;
      t.category = cat;
      t.subgroup = sub;
      const double stretch = 1.0 + 0.5 * sub;  // subgroups differ in aspect
      t.size_min = {base * stretch, base * 0.8, base * (1.0 + 0.2 * sub)};
      t.size_max = {base * stretch * 1.3, base * 1.1, base * (1.3 + 0.2 * sub)};
      t.albedo = {0.15 + 0.8 * ((cat * 37) % 11) / 10.0,
                  0.15 + 0.8 * ((cat * 53 + sub * 17) % 11) / 10.0,
                  0.15 + 0.8 * ((cat * 71 + sub * 29) % 11) / 10.0};
      catalog.push_back(t);
    }
  }
  return catalog;
}

inline std::vector<double> zipf_weights(int n, double s) {
  std::vector<double> w(n);
  for (int k = 1; k <= n; ++k) w[k - 1] = std::pow(static_cast<double>(k), -s);
  return w;
}

// Categories ~ Zipf(s); placements rejection-sampled to pairwise disjoint
// footprints inside the forward wedge the camera sees.
inline SceneDescription generate_scene(const std::vector<ObjectTemplate>& catalog,
                                       double zipf_s, int n_objects,
                                       std::mt19937_64& rng) {
  if (catalog.empty()) throw std::invalid_argument("generate_scene: empty catalog");
  if (zipf_s <= 0.0) throw std::invalid_argument("generate_scene: zipf_s must be > 0");

  int n_categories = 0;
  for (const auto& t : catalog) n_categories = std::max(n_categories, t.category);
  const auto weights = zipf_weights(n_categories, zipf_s);
  std::discrete_distribution<int> category_dist(weights.begin(), weights.end());

  SceneDescription scene;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n_objects; ++i) {
    const int category = category_dist(rng) + 1;
    std::vector<const ObjectTemplate*> variants;
    for (const auto& t : catalog)
      if (t.category == category) variants.push_back(&t);
    const ObjectTemplate& tmpl =
        *variants[std::uniform_int_distribution<std::size_t>(0, variants.size() - 1)(rng)];

    PlacedObject obj;
    obj.shape = tmpl.shape;
    obj.category = tmpl.category;
    obj.subgroup = tmpl.subgroup;
    obj.albedo = tmpl.albedo;
    for (int a = 0; a < 3; ++a)
      obj.size[a] = tmpl.size_min[a] + (tmpl.size_max[a] - tmpl.size_min[a]) * unit(rng);
    obj.yaw = 2.0 * M_PI * unit(rng);

    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      obj.x = 7.0 + 23.0 * unit(rng);
      obj.y = (unit(rng) - 0.5) * 0.9 * obj.x;  // stay inside the camera wedge
      placed = true;
      for (const auto& other : scene.objects) {
        const double dx = obj.x - other.x, dy = obj.y - other.y;
        const double min_gap = obj.footprint_radius() + other.footprint_radius() + 1.0;
        if (dx * dx + dy * dy < min_gap * min_gap) {
          placed = false;
          break;
        }
      }
    }
    if (placed) scene.objects.push_back(obj);
  }
  return scene;
}

// --- ray casting -------------------------------------------------------------

namespace detail {

struct Ray {
  double ox, oy, oz;
  double dx, dy, dz;  // unit
};

inline std::optional<double> hit_ground(const Ray& ray, double ground_z) {
  if (std::abs(ray.dz) < 1e-12) return std::nullopt;
  const double t = (ground_z - ray.oz) / ray.dz;
  return t > 1e-6 ? std::optional<double>(t) : std::nullopt;
}

inline std::optional<double> hit_sphere(const Ray& ray, double cx, double cy, double cz,
                                        double r) {
  const double ox = ray.ox - cx, oy = ray.oy - cy, oz = ray.oz - cz;
  const double b = ox * ray.dx + oy * ray.dy + oz * ray.dz;
  const double c = ox * ox + oy * oy + oz * oz - r * r;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  return t > 1e-6 ? std::optional<double>(t) : std::nullopt;
}

inline std::optional<double> hit_object(const Ray& ray, const PlacedObject& obj,
                                        double ground_z) {
  // Transform into the object frame (yaw about z, base on the ground).
  const double c = std::cos(-obj.yaw), s = std::sin(-obj.yaw);
  const double ox = c * (ray.ox - obj.x) - s * (ray.oy - obj.y);
  const double oy = s * (ray.ox - obj.x) + c * (ray.oy - obj.y);
  const double oz = ray.oz - ground_z;
  const double dx = c * ray.dx - s * ray.dy;
  const double dy = s * ray.dx + c * ray.dy;
  const double dz = ray.dz;

  const double h = obj.size[2];
  switch (obj.shape) {
    case ShapeKind::box: {
      const double hx = obj.size[0] / 2.0, hy = obj.size[1] / 2.0;
      double t0 = 1e-6, t1 = 1e300;
      const double lo[3] = {-hx, -hy, 0.0}, hi[3] = {hx, hy, h};
      const double o[3] = {ox, oy, oz}, d[3] = {dx, dy, dz};
      for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
          if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
          continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
      }
      return t0;
    }
    case ShapeKind::cylinder:
    case ShapeKind::capsule: {
      const double r = obj.size[0] / 2.0;
      std::optional<double> best;
      // Lateral surface.
      const double a2 = dx * dx + dy * dy;
      if (a2 > 1e-12) {
        const double b = (ox * dx + oy * dy) / a2;
        const double cq = (ox * ox + oy * oy - r * r) / a2;
        const double disc = b * b - cq;
        if (disc >= 0.0) {
          const double t = -b - std::sqrt(disc);
          if (t > 1e-6) {
            const double z = oz + t * dz;
            const double z_lo = obj.shape == ShapeKind::capsule ? r : 0.0;
            const double z_hi = obj.shape == ShapeKind::capsule ? h - r : h;
            if (z >= z_lo && z <= z_hi) best = t;
          }
        }
      }
      // Flat top for the cylinder, sphere caps for the capsule.
      if (obj.shape == ShapeKind::cylinder) {
        if (std::abs(dz) > 1e-12) {
          const double t = (h - oz) / dz;
          if (t > 1e-6) {
            const double px = ox + t * dx, py = oy + t * dy;
            if (px * px + py * py <= r * r && (!best || t < *best)) best = t;
          }
        }
      } else {
        const Ray local{ox, oy, oz, dx, dy, dz};
        for (const double cz : {r, h - r}) {
          const auto t = hit_sphere(local, 0.0, 0.0, cz, r);
          if (t && (!best || *t < *best)) best = t;
        }
      }
      return best;
    }
  }
  return std::nullopt;
}

struct Hit {
  double t = 0.0;
  int source = -1;  // 0 = ground, i+1 = object i
};

inline std::optional<Hit> cast_ray(const Ray& ray, const SceneDescription& scene) {
  std::optional<Hit> best;
  if (const auto t = hit_ground(ray, scene.ground_z)) best = Hit{*t, 0};
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto t = hit_object(ray, scene.objects[i], scene.ground_z);
    if (t && (!best || *t < best->t)) best = Hit{*t, static_cast<int>(i) + 1};
  }
  return best;
}

inline double luminance(const std::array<double, 3>& rgb) {
  return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

constexpr double kLidarRangeNoiseSigma = 0.01;  // meters
constexpr double kLidarMaxRange = 80.0;

struct SimulatedSweep {
  PointCloud cloud;
  std::vector<int> source_ids;
};

// One ray per (row, col); nearest ground/object hit with Gaussian range
// noise, intensity from albedo luminance.
inline SimulatedSweep simulate_lidar(const SceneDescription& scene, const BeamConfig& beams,
                                     std::mt19937_64& rng,
                                     double noise_sigma = kLidarRangeNoiseSigma) {
  beams.validate();
  SimulatedSweep sweep;
  std::normal_distribution<double> noise(0.0, noise_sigma);
  const double half_fov = beams.azimuth_fov / 2.0;
  for (int r = 0; r < beams.n_rows; ++r) {
    const double elev = beams.elevation_angles[r];
    for (int c = 0; c < beams.n_cols; ++c) {
      const double az = -half_fov + (c + 0.5) * beams.azimuth_step();
      detail::Ray ray{0.0, 0.0, 0.0, std::cos(elev) * std::cos(az),
                      std::cos(elev) * std::sin(az), std::sin(elev)};
      const auto hit = detail::cast_ray(ray, scene);
      if (!hit || hit->t > kLidarMaxRange) continue;
      const double t = std::max(0.1, hit->t + (noise_sigma > 0.0 ? noise(rng) : 0.0));
      const auto& albedo = hit->source == 0 ? scene.ground_albedo
                                            : scene.objects[hit->source - 1].albedo;
      sweep.cloud.points.push_back(
          {ray.dx * t, ray.dy * t, ray.dz * t, detail::luminance(albedo)});
      sweep.source_ids.push_back(hit->source);
    }
  }
  return sweep;
}

inline CameraModel default_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 300.0;
  cam.cx = 160.0;
  cam.cy = 120.0;
  cam.width = 320;
  cam.height = 240;
  // sensor (x fwd, y left, z up) -> camera (x right, y down, z fwd)
  cam.rotation = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  cam.translation = {0, 0, 0};
  return cam;
}

constexpr int kOcclusionPixelThreshold = 25;

struct RenderResult {
  Image image;
  std::vector<GroundTruthBox> gt;  // per visible object; heavily_occluded when
                                   // fewer than kOcclusionPixelThreshold pixels
};

// Per-pixel ray cast with flat lambert shading; GT boxes are the tight hulls
// of each object's rendered mask.
inline RenderResult render_image(const SceneDescription& scene, const CameraModel& cam,
                                 const std::string& frame_id) {
  cam.validate();
  RenderResult out;
  out.image = Image(cam.width, cam.height);
  const auto& r = cam.rotation;

  struct Mask {
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
    int pixels = 0;
  };
  std::vector<Mask> masks(scene.objects.size());

  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      // camera-frame direction through the pixel center
      const double cxd = (px + 0.5 - cam.cx) / cam.fx;
      const double cyd = (py + 0.5 - cam.cy) / cam.fy;
      double dx = r[0] * cxd + r[3] * cyd + r[6];
      double dy = r[1] * cxd + r[4] * cyd + r[7];
      double dz = r[2] * cxd + r[5] * cyd + r[8];
      const double norm = std::sqrt(dx * dx + dy * dy + dz * dz);
      dx /= norm; dy /= norm; dz /= norm;

      const auto hit = detail::cast_ray({0, 0, 0, dx, dy, dz}, scene);
      std::array<double, 3> color;
      if (!hit || hit->t > 200.0) {
        color = {0.55, 0.70, 0.90};  // sky
      } else if (hit->source == 0) {
        const double fade = std::exp(-hit->t / 60.0);
        color = {scene.ground_albedo[0] * (0.5 + 0.5 * fade),
                 scene.ground_albedo[1] * (0.5 + 0.5 * fade),
                 scene.ground_albedo[2] * (0.5 + 0.5 * fade)};
      } else {
        const auto& obj = scene.objects[hit->source - 1];
        const double shade = 0.6 + 0.4 * std::exp(-hit->t / 80.0);
        color = {obj.albedo[0] * shade, obj.albedo[1] * shade, obj.albedo[2] * shade};
        auto& m = masks[hit->source - 1];
        m.x0 = std::min(m.x0, px);
        m.y0 = std::min(m.y0, py);
        m.x1 = std::max(m.x1, px);
        m.y1 = std::max(m.y1, py);
        ++m.pixels;
      }
      out.image.set(px, py, static_cast<std::uint8_t>(std::clamp(color[0], 0.0, 1.0) * 255),
                    static_cast<std::uint8_t>(std::clamp(color[1], 0.0, 1.0) * 255),
                    static_cast<std::uint8_t>(std::clamp(color[2], 0.0, 1.0) * 255));
    }
  }

  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& m = masks[i];
    if (m.pixels == 0) continue;
    GroundTruthBox g;
    g.frame_id = frame_id;
    g.bbox = {static_cast<double>(m.x0), static_cast<double>(m.y0),
              static_cast<double>(m.x1 + 1), static_cast<double>(m.y1 + 1)};
    g.category = scene.objects[i].category;
    g.heavily_occluded = m.pixels < kOcclusionPixelThreshold;
    out.gt.push_back(g);
  }
  return out;
}

// --- dataset generation ------------------------------------------------------

struct DatasetConfig {
  std::vector<ObjectTemplate> catalog = default_catalog();
  double zipf_s = 1.5;
  int min_objects = 2;
  int max_objects = 6;
  BeamConfig beams;
  CameraModel camera = default_camera();

  DatasetConfig() {
    beams.n_rows = 48;
    beams.n_cols = 720;
    beams.azimuth_fov = M_PI;  // forward half-sweep
    for (int i = 0; i < beams.n_rows; ++i)
      beams.elevation_angles.push_back((-20.0 + 22.0 * i / (beams.n_rows - 1)) * M_PI / 180.0);
  }
};

inline ScenePackage generate_frame(const DatasetConfig& cfg, std::uint64_t frame_seed,
                                   const std::string& frame_id) {
  std::mt19937_64 rng(frame_seed);
  std::uniform_int_distribution<int> n_obj(cfg.min_objects, cfg.max_objects);
  const SceneDescription scene = generate_scene(cfg.catalog, cfg.zipf_s, n_obj(rng), rng);
  auto sweep = simulate_lidar(scene, cfg.beams, rng);
  auto render = render_image(scene, cfg.camera, frame_id);
  ScenePackage pkg;
  pkg.cloud = std::move(sweep.cloud);
  pkg.cloud.frame_id = frame_id;
  pkg.source_ids = std::move(sweep.source_ids);
  pkg.image = std::move(render.image);
  pkg.gt = std::move(render.gt);
  pkg.camera = cfg.camera;
  pkg.seed = frame_seed;
  return pkg;
}

inline void save_source_ids(const std::vector<int>& ids, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write source ids: " + path);
  for (int id : ids) {
    const std::int32_t v = id;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
}

inline std::vector<int> load_source_ids(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open source ids: " + path);
  std::vector<int> ids;
  std::int32_t v = 0;
  while (in.read(reinterpret_cast<char*>(&v), sizeof(v))) ids.push_back(v);
  return ids;
}

inline std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

// Deterministic per-frame seeds; emits clouds, images, source-id sidecars, a
// single GT file, calibration, beam config, and a manifest of all paths.
inline void generate_dataset(int n_frames, const DatasetConfig& cfg, std::uint64_t seed,
                             const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "clouds");
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "source_ids");

  std::vector<GroundTruthBox> all_gt;
  std::ofstream manifest((fs::path(out_dir) / "manifest.txt").string());
  if (!manifest) throw std::runtime_error("cannot write manifest in " + out_dir);

  for (int i = 0; i < n_frames; ++i) {
    const std::string frame = frame_name(i);
    const std::uint64_t frame_seed = detail::splitmix64(seed ^ detail::splitmix64(i));
    const ScenePackage pkg = generate_frame(cfg, frame_seed, frame);

    const std::string cloud_rel = "clouds/" + frame + ".bin";
    const std::string image_rel = "images/" + frame + ".png";
    const std::string ids_rel = "source_ids/" + frame + ".ids";
    save_cloud(pkg.cloud, (fs::path(out_dir) / cloud_rel).string());
    save_png(pkg.image, (fs::path(out_dir) / image_rel).string());
    save_source_ids(pkg.source_ids, (fs::path(out_dir) / ids_rel).string());
    all_gt.insert(all_gt.end(), pkg.gt.begin(), pkg.gt.end());
    manifest << frame << ' ' << cloud_rel << ' ' << image_rel << ' ' << ids_rel << '\n';
  }

  save_ground_truth(all_gt, (fs::path(out_dir) / "ground_truth.jsonl").string());
  save_camera(cfg.camera, (fs::path(out_dir) / "calibration.txt").string());
  save_beam_config(cfg.beams, (fs::path(out_dir) / "beams.txt").string());
}

struct ManifestEntry {
  std::string frame_id;
  std::string cloud_path;
  std::string image_path;
  std::string ids_path;
};

inline std::vector<ManifestEntry> load_manifest(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dataset_dir) / "manifest.txt").string();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  ManifestEntry e;
  while (in >> e.frame_id >> e.cloud_path >> e.image_path >> e.ids_path) {
    e.cloud_path = (fs::path(dataset_dir) / e.cloud_path).string();
    e.image_path = (fs::path(dataset_dir) / e.image_path).string();
    e.ids_path = (fs::path(dataset_dir) / e.ids_path).string();
    entries.push_back(e);
  }
  return entries;
}

}  // namespace lidarseed

#endif  // LIDARSEED_SYNTH_HPP
