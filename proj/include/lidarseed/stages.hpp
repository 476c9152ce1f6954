#ifndef LIDARSEED_STAGES_HPP
#define LIDARSEED_STAGES_HPP

// Pipeline stage drivers. Each stage reads only on-disk artifacts of earlier
// stages and writes its own outputs under <out_dir>/<stage>/, so any stage can
// be deleted and re-run bit-identically under the same seed.

#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "lidarseed/pipeline.hpp"

namespace lidarseed {

// --- logging -----------------------------------------------------------------

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("LIDARSEED_LOG");
    if (!env) return LogLevel::info;
    const std::string v(env);
    if (v == "error") return LogLevel::error;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[info] " << msg << '\n';
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::cerr << "[debug] " << msg << '\n';
}

// --- configuration -----------------------------------------------------------

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  std::string dataset_dir;
  std::string out_dir;
  std::uint64_t seed = 1;
  int workers = 1;

  // synth-gen
  int synth_frames = 100;
  int synth_categories = 10;
  int synth_subgroups = 3;
  double synth_zipf_s = 1.5;
  int synth_min_objects = 2;
  int synth_max_objects = 6;
  int synth_beam_rows = 32;
  int synth_beam_cols = 360;

  SegmentationParams segmentation;

  bool pretrain_enabled = false;
  ContrastiveConfig contrastive;

  LabelerConfig labeler;
  int kmeans_iters = 100;
  int jitters_per_segment = kDefaultJittersPerSegment;

  double nms_iou = kNmsIouThreshold;
  bool exclude_occluded_gt = true;
  double train_fraction = 0.75;
  std::vector<double> eta_sweep{0.999, 0.99, 0.95, 0.90, 0.80};
  int overlay_frames = 20;
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::set<std::string>& known,
                         const std::string& scope) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw ConfigError("unknown config key: " + scope + key);
}

template <class T>
inline void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class F>
inline void parallel_frames(std::size_t n, int workers, F&& fn) {
  workers = std::max(1, workers);
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<std::size_t>(workers, n); ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline PipelineConfig load_pipeline_config(const std::string& path,
                                           bool require_dataset = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config file " + path + ": " + e.what());
  }

  detail::require_keys(j, {"dataset_dir", "out_dir", "seed", "workers", "synth",
                           "segmentation", "pretrain", "labeler", "eval"},
                       "");
  PipelineConfig cfg;
  detail::read_key(j, "dataset_dir", cfg.dataset_dir);
  detail::read_key(j, "out_dir", cfg.out_dir);
  detail::read_key(j, "seed", cfg.seed);
  detail::read_key(j, "workers", cfg.workers);
  if (cfg.dataset_dir.empty()) throw ConfigError("config: dataset_dir is required");
  if (cfg.out_dir.empty()) throw ConfigError("config: out_dir is required");
  if (cfg.workers < 1) throw ConfigError("config: workers must be >= 1");

  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    detail::require_keys(s,
                         {"frames", "categories", "subgroups_per_head", "zipf_s",
                          "min_objects", "max_objects", "beam_rows", "beam_cols"},
                         "synth.");
    detail::read_key(s, "frames", cfg.synth_frames);
    detail::read_key(s, "categories", cfg.synth_categories);
    detail::read_key(s, "subgroups_per_head", cfg.synth_subgroups);
    detail::read_key(s, "zipf_s", cfg.synth_zipf_s);
    detail::read_key(s, "min_objects", cfg.synth_min_objects);
    detail::read_key(s, "max_objects", cfg.synth_max_objects);
    detail::read_key(s, "beam_rows", cfg.synth_beam_rows);
    detail::read_key(s, "beam_cols", cfg.synth_beam_cols);
  }
  if (j.contains("segmentation")) {
    const auto& s = j.at("segmentation");
    detail::require_keys(
        s, {"ground_angle_deg", "beta_deg", "min_segment_points", "min_visible_points"},
        "segmentation.");
    detail::read_key(s, "ground_angle_deg", cfg.segmentation.ground_angle_deg);
    detail::read_key(s, "beta_deg", cfg.segmentation.beta_deg);
    detail::read_key(s, "min_segment_points", cfg.segmentation.min_segment_points);
    detail::read_key(s, "min_visible_points", cfg.segmentation.min_visible_points);
  }
  if (j.contains("pretrain")) {
    const auto& s = j.at("pretrain");
    detail::require_keys(s, {"enabled", "hidden", "batch_size", "epochs", "temperature", "lr"},
                         "pretrain.");
    detail::read_key(s, "enabled", cfg.pretrain_enabled);
    if (s.contains("hidden")) {
      cfg.contrastive.layer_dims = {kFeatureDim};
      for (int h : s.at("hidden").get<std::vector<int>>())
        cfg.contrastive.layer_dims.push_back(h);
    }
    detail::read_key(s, "batch_size", cfg.contrastive.batch_size);
    detail::read_key(s, "epochs", cfg.contrastive.epochs);
    detail::read_key(s, "temperature", cfg.contrastive.temperature);
    detail::read_key(s, "lr", cfg.contrastive.lr);
  }
  if (j.contains("labeler")) {
    const auto& s = j.at("labeler");
    detail::require_keys(s,
                         {"clusters", "eta", "rounds", "hidden", "batch_size", "steps", "lr",
                          "momentum", "weight_decay", "jitters_per_segment", "kmeans_iters"},
                         "labeler.");
    detail::read_key(s, "clusters", cfg.labeler.n_clusters);
    detail::read_key(s, "eta", cfg.labeler.eta);
    detail::read_key(s, "rounds", cfg.labeler.rounds);
    detail::read_key(s, "hidden", cfg.labeler.hidden_dims);
    detail::read_key(s, "batch_size", cfg.labeler.batch_size);
    detail::read_key(s, "steps", cfg.labeler.steps);
    detail::read_key(s, "lr", cfg.labeler.lr);
    detail::read_key(s, "momentum", cfg.labeler.momentum);
    detail::read_key(s, "weight_decay", cfg.labeler.weight_decay);
    detail::read_key(s, "jitters_per_segment", cfg.jitters_per_segment);
    detail::read_key(s, "kmeans_iters", cfg.kmeans_iters);
  }
  if (j.contains("eval")) {
    const auto& s = j.at("eval");
    detail::require_keys(
        s, {"nms_iou", "exclude_occluded_gt", "train_fraction", "eta_sweep", "overlay_frames"},
        "eval.");
    detail::read_key(s, "nms_iou", cfg.nms_iou);
    detail::read_key(s, "exclude_occluded_gt", cfg.exclude_occluded_gt);
    detail::read_key(s, "train_fraction", cfg.train_fraction);
    detail::read_key(s, "eta_sweep", cfg.eta_sweep);
    detail::read_key(s, "overlay_frames", cfg.overlay_frames);
  }

  if (require_dataset && !std::filesystem::exists(cfg.dataset_dir))
    throw ConfigError("config: dataset_dir does not exist: " + cfg.dataset_dir);
  return cfg;
}

// --- stage paths -------------------------------------------------------------

inline std::string stage_dir(const PipelineConfig& cfg, const std::string& stage) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(cfg.out_dir) / stage;
  fs::create_directories(dir);
  return dir.string();
}

inline std::string stage_path(const PipelineConfig& cfg, const std::string& stage,
                              const std::string& file) {
  return (std::filesystem::path(stage_dir(cfg, stage)) / file).string();
}

// --- synth-gen ---------------------------------------------------------------

inline DatasetConfig make_dataset_config(const PipelineConfig& cfg) {
  DatasetConfig d;
  d.catalog = default_catalog(cfg.synth_categories, cfg.synth_subgroups);
  d.zipf_s = cfg.synth_zipf_s;
  d.min_objects = cfg.synth_min_objects;
  d.max_objects = cfg.synth_max_objects;
  d.beams = BeamConfig{};
  d.beams.n_rows = cfg.synth_beam_rows;
  d.beams.n_cols = cfg.synth_beam_cols;
  d.beams.azimuth_fov = M_PI;
  for (int i = 0; i < d.beams.n_rows; ++i)
    d.beams.elevation_angles.push_back((-20.0 + 22.0 * i / (d.beams.n_rows - 1)) * M_PI /
                                       180.0);
  return d;
}

inline void stage_synth_gen(const PipelineConfig& cfg) {
  log_info("synth-gen: " + std::to_string(cfg.synth_frames) + " frames -> " +
           cfg.dataset_dir);
  generate_dataset(cfg.synth_frames, make_dataset_config(cfg), cfg.seed, cfg.dataset_dir);
}

// --- dataset context ---------------------------------------------------------

struct DatasetContext {
  std::vector<ManifestEntry> entries;
  CameraModel camera;
  BeamConfig beams;
  std::vector<GroundTruthBox> gt;
};

inline DatasetContext load_dataset_context(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  DatasetContext ctx;
  ctx.entries = load_manifest(cfg.dataset_dir);
  if (ctx.entries.empty())
    throw std::runtime_error("dataset manifest is empty: " + cfg.dataset_dir);
  ctx.camera = load_camera((fs::path(cfg.dataset_dir) / "calibration.txt").string());
  ctx.beams = load_beam_config((fs::path(cfg.dataset_dir) / "beams.txt").string());
  const std::string gt_path = (fs::path(cfg.dataset_dir) / "ground_truth.jsonl").string();
  if (fs::exists(gt_path)) ctx.gt = load_ground_truth(gt_path);
  return ctx;
}

// --- segment stage -----------------------------------------------------------

// One JSON object per proposal: {frame, segment, x1, y1, x2, y2, points}.
inline void save_proposals(const std::vector<SegmentProposal>& proposals,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write proposals: " + path);
  for (const auto& p : proposals) {
    nlohmann::json j{{"frame", p.frame_id},     {"segment", p.segment_id},
                     {"x1", p.bbox.x_min},      {"y1", p.bbox.y_min},
                     {"x2", p.bbox.x_max},      {"y2", p.bbox.y_max},
                     {"points", p.point_indices}};
    out << j.dump() << '\n';
  }
}

inline std::vector<SegmentProposal> load_proposals(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open proposals: " + path);
  std::vector<SegmentProposal> proposals;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    SegmentProposal p;
    p.frame_id = j.at("frame").get<std::string>();
    p.segment_id = j.at("segment").get<int>();
    p.bbox = {j.at("x1").get<double>(), j.at("y1").get<double>(), j.at("x2").get<double>(),
              j.at("y2").get<double>()};
    p.point_indices = j.at("points").get<std::vector<int>>();
    proposals.push_back(std::move(p));
  }
  return proposals;
}

inline void stage_segment(const PipelineConfig& cfg) {
  const DatasetContext ctx = load_dataset_context(cfg);
  std::vector<std::vector<SegmentProposal>> per_frame(ctx.entries.size());
  std::atomic<std::size_t> n_empty{0};
  detail::parallel_frames(ctx.entries.size(), cfg.workers, [&](std::size_t i) {
    const PointCloud cloud = load_cloud(ctx.entries[i].cloud_path, ctx.entries[i].frame_id);
    try {
      per_frame[i] = extract_segments(cloud, ctx.camera, ctx.beams, cfg.segmentation);
    } catch (const EmptyFrameError&) {
      ++n_empty;
    }
  });

  std::vector<SegmentProposal> all;
  for (auto& f : per_frame)
    for (auto& p : f) all.push_back(std::move(p));
  save_proposals(all, stage_path(cfg, "segment", "proposals.jsonl"));

  std::ofstream summary(stage_path(cfg, "segment", "summary.txt"));
  summary << "frames " << ctx.entries.size() << '\n'
          << "empty_frames " << n_empty.load() << '\n'
          << "proposals " << all.size() << '\n';
  log_info("segment: " + std::to_string(all.size()) + " proposals, " +
           std::to_string(n_empty.load()) + " empty frames");
}

// --- per-segment collection (streaming; frames are not kept in memory) -------

struct CollectedSegment {
  SegmentKey key;
  BBox2D bbox;
  Eigen::VectorXd raw;  // kFeatureDim descriptor of the un-jittered segment
  std::vector<std::pair<Eigen::VectorXd, int>> raw_jitters;  // (descriptor, z_hat)
  std::vector<Point3> points;  // kept only when collect requests it (pretrain)
};

struct CollectOptions {
  int jitters_per_segment = 0;
  bool keep_points = false;
};

// Raw descriptors (and optional jitter draws) for every proposal, one frame in
// memory at a time. Degenerate-patch segments are dropped. Per-frame RNG keys
// make the result independent of worker count.
inline std::vector<CollectedSegment> collect_segments(
    const DatasetContext& ctx, const std::vector<SegmentProposal>& proposals,
    const PipelineConfig& cfg, const CollectOptions& opt, std::uint64_t base_seed) {
  std::map<std::string, std::size_t> frame_index;
  for (std::size_t i = 0; i < ctx.entries.size(); ++i)
    frame_index[ctx.entries[i].frame_id] = i;

  std::vector<std::vector<const SegmentProposal*>> by_frame(ctx.entries.size());
  for (const auto& p : proposals) {
    const auto it = frame_index.find(p.frame_id);
    if (it == frame_index.end())
      throw std::runtime_error("proposal references unknown frame: " + p.frame_id);
    by_frame[it->second].push_back(&p);
  }

  std::vector<std::vector<CollectedSegment>> out(ctx.entries.size());
  detail::parallel_frames(ctx.entries.size(), cfg.workers, [&](std::size_t fi) {
    if (by_frame[fi].empty()) return;
    const PointCloud cloud = load_cloud(ctx.entries[fi].cloud_path, ctx.entries[fi].frame_id);
    const Image image = load_png(ctx.entries[fi].image_path);
    std::mt19937_64 rng(lidarseed::detail::splitmix64(
        base_seed ^ lidarseed::detail::splitmix64(static_cast<std::uint64_t>(fi))));

    for (const SegmentProposal* seg : by_frame[fi]) {
      CollectedSegment c;
      c.key = {seg->frame_id, seg->segment_id};
      c.bbox = seg->bbox;
      c.raw.resize(kFeatureDim);
      const auto pts = gather_points(cloud, seg->point_indices);
      c.raw.head(kShapeDim) = shape_descriptor(pts);
      try {
        c.raw.tail(kAppearanceDim) = appearance_descriptor(image, seg->bbox);
      } catch (const DegeneratePatchError&) {
        continue;
      }
      if (opt.keep_points) c.points = pts;

      for (int jit = 0; jit < opt.jitters_per_segment; ++jit) {
        for (int attempt = 0; attempt < kMaxDegenerateRedraws; ++attempt) {
          const JitterGeometry geo = jitter_box(seg->bbox, rng);
          const auto kept = jitter_segment(cloud, seg->point_indices, geo.bbox, ctx.camera);
          if (kept.empty()) continue;
          Eigen::VectorXd v(kFeatureDim);
          v.head(kShapeDim) = shape_descriptor(gather_points(cloud, kept));
          try {
            v.tail(kAppearanceDim) = appearance_descriptor(image, geo.bbox);
          } catch (const DegeneratePatchError&) {
            continue;
          }
          c.raw_jitters.emplace_back(std::move(v), geo.z_hat);
          break;
        }
      }
      out[fi].push_back(std::move(c));
    }
  });

  std::vector<CollectedSegment> flat;
  for (auto& f : out)
    for (auto& c : f) flat.push_back(std::move(c));
  if (flat.empty()) throw std::runtime_error("no usable segments in dataset");
  return flat;
}

// Standardized (and optionally encoded) per-segment feature matrix.
inline Eigen::MatrixXd embed_segments(const std::vector<CollectedSegment>& segments,
                                      const FeatureStats& stats,
                                      const ContrastiveEncoder* encoder) {
  Eigen::MatrixXd std_rows(segments.size(), kFeatureDim);
  for (std::size_t i = 0; i < segments.size(); ++i)
    std_rows.row(i) = stats.apply(segments[i].raw).transpose();
  return encoder ? encoder->net.predict(std_rows) : std_rows;
}

inline FeatureStats fit_segment_stats(const std::vector<CollectedSegment>& segments) {
  Eigen::MatrixXd raw(segments.size(), kFeatureDim);
  for (std::size_t i = 0; i < segments.size(); ++i) raw.row(i) = segments[i].raw.transpose();
  return FeatureStats::fit(raw);
}

inline std::vector<SegmentTrainingData> embed_training_data(
    const std::vector<CollectedSegment>& segments, const Eigen::MatrixXd& embedded,
    const FeatureStats& stats, const ContrastiveEncoder* encoder) {
  std::vector<SegmentTrainingData> data(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    data[i].key = segments[i].key;
    data[i].feature = embedded.row(i).transpose();
    for (const auto& [raw, z] : segments[i].raw_jitters) {
      Eigen::VectorXd x = stats.apply(raw);
      if (encoder) x = encoder->encode(x);
      data[i].jitters.push_back({std::move(x), z});
    }
  }
  return data;
}

// --- pretrain stage ----------------------------------------------------------

inline void stage_pretrain(const PipelineConfig& cfg) {
  const DatasetContext ctx = load_dataset_context(cfg);
  const auto proposals = load_proposals(stage_path(cfg, "segment", "proposals.jsonl"));
  CollectOptions opt;
  opt.keep_points = true;
  const auto segments = collect_segments(ctx, proposals, cfg, opt,
                                         lidarseed::detail::splitmix64(cfg.seed ^ 0x70));
  std::vector<ContrastiveItem> items;
  for (const auto& s : segments)
    items.push_back({s.points, s.raw.tail(kAppearanceDim)});
  std::mt19937_64 rng(lidarseed::detail::splitmix64(cfg.seed ^ 0x9e37));
  const auto result = contrastive_pretrain(items, cfg.contrastive, rng);

  std::ofstream model(stage_path(cfg, "pretrain", "encoder.txt"));
  model << result.encoder.temperature << '\n';
  result.encoder.net.save(model);
  std::ofstream trace(stage_path(cfg, "pretrain", "loss_trace.csv"));
  trace << "epoch,loss\n";
  trace.precision(17);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    trace << e + 1 << ',' << result.epoch_loss[e] << '\n';
  log_info("pretrain: " + std::to_string(items.size()) + " segments, final loss " +
           std::to_string(result.epoch_loss.back()));
}

inline std::optional<ContrastiveEncoder> load_encoder_if_present(const PipelineConfig& cfg) {
  const std::string path = stage_path(cfg, "pretrain", "encoder.txt");
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  ContrastiveEncoder enc;
  in >> enc.temperature;
  enc.net = Mlp::load(in);
  return enc;
}

// --- init stage --------------------------------------------------------------

inline void stage_init(const PipelineConfig& cfg) {
  const DatasetContext ctx = load_dataset_context(cfg);
  const auto proposals = load_proposals(stage_path(cfg, "segment", "proposals.jsonl"));
  const auto segments = collect_segments(ctx, proposals, cfg, CollectOptions{}, cfg.seed);
  const FeatureStats stats = fit_segment_stats(segments);
  const auto encoder = cfg.pretrain_enabled ? load_encoder_if_present(cfg) : std::nullopt;
  const Eigen::MatrixXd embedded =
      embed_segments(segments, stats, encoder ? &*encoder : nullptr);

  std::vector<SegmentKey> keys;
  for (const auto& s : segments) keys.push_back(s.key);
  const auto labels =
      init_labels(embedded, keys, cfg.labeler.n_clusters, cfg.kmeans_iters,
                  lidarseed::detail::splitmix64(cfg.seed ^ 0x1417));
  save_labels(labels, stage_path(cfg, "init", "labels_init.txt"));
  log_info("init: " + std::to_string(labels.size()) + " segments labeled into " +
           std::to_string(cfg.labeler.n_clusters) + " clusters");
}

// --- iterate stage -----------------------------------------------------------

inline std::vector<int> align_labels(const std::vector<SegmentLabel>& labels,
                                     const std::vector<SegmentKey>& keys) {
  std::map<SegmentKey, int> by_key;
  for (const auto& l : labels) by_key[l.ref] = l.y;
  std::vector<int> y(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto it = by_key.find(keys[i]);
    if (it == by_key.end())
      throw std::runtime_error("label file is missing segment " + keys[i].frame_id + "/" +
                               std::to_string(keys[i].segment_id));
    y[i] = it->second;
  }
  return y;
}

inline void stage_iterate(const PipelineConfig& cfg) {
  const DatasetContext ctx = load_dataset_context(cfg);
  const auto proposals = load_proposals(stage_path(cfg, "segment", "proposals.jsonl"));
  CollectOptions opt;
  opt.jitters_per_segment = cfg.jitters_per_segment;
  const auto segments = collect_segments(ctx, proposals, cfg, opt, cfg.seed);
  const FeatureStats stats = fit_segment_stats(segments);
  const auto encoder = cfg.pretrain_enabled ? load_encoder_if_present(cfg) : std::nullopt;
  const ContrastiveEncoder* enc = encoder ? &*encoder : nullptr;
  const Eigen::MatrixXd embedded = embed_segments(segments, stats, enc);
  const auto data = embed_training_data(segments, embedded, stats, enc);

  std::vector<SegmentKey> keys;
  for (const auto& s : segments) keys.push_back(s.key);
  const auto initial =
      align_labels(load_labels(stage_path(cfg, "init", "labels_init.txt")), keys);

  std::mt19937_64 rng(lidarseed::detail::splitmix64(cfg.seed ^ 0x1e2a));
  const IterateResult result =
      iterate(data, initial, cfg.labeler, rng, enc ? &enc->net : nullptr);

  std::vector<SegmentLabel> final_labels(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) final_labels[i] = {keys[i], result.labels[i]};
  save_labels(final_labels, stage_path(cfg, "iterate", "labels_final.txt"));
  save_labeler(result.final_model, stage_path(cfg, "iterate", "model.txt"));
  save_reports(result.reports, stage_path(cfg, "iterate", "reports.jsonl"));
  log_info("iterate: " + std::to_string(cfg.labeler.rounds) + " rounds, " +
           std::to_string(result.reports.back().n_foreground) + " foreground segments");
}

// --- export stage ------------------------------------------------------------

inline void stage_export(const PipelineConfig& cfg) {
  const auto proposals = load_proposals(stage_path(cfg, "segment", "proposals.jsonl"));
  std::map<SegmentKey, SegmentProposal> by_key;
  for (const auto& p : proposals) by_key[{p.frame_id, p.segment_id}] = p;

  std::vector<SegmentLabel> labels;
  for (const auto& l : load_labels(stage_path(cfg, "iterate", "labels_final.txt")))
    if (by_key.count(l.ref)) labels.push_back(l);
  const ExportSummary summary = export_pseudo_annotations(
      labels, by_key, stage_path(cfg, "export", "annotations.jsonl"));
  log_info("export: " + std::to_string(summary.n_foreground) + " annotations, " +
           std::to_string(summary.n_background) + " background segments skipped");
}

// --- eval stage --------------------------------------------------------------

struct EvalInputs {
  DatasetContext ctx;
  std::vector<CollectedSegment> segments;
  Eigen::MatrixXd embedded;
  LabelerModel model;
  std::vector<int> final_labels;
  std::set<std::string> train_frames;  // first train_fraction of the manifest
};

inline EvalInputs load_eval_inputs(const PipelineConfig& cfg) {
  EvalInputs ev;
  ev.ctx = load_dataset_context(cfg);
  const auto proposals = load_proposals(stage_path(cfg, "segment", "proposals.jsonl"));
  ev.segments = collect_segments(ev.ctx, proposals, cfg, CollectOptions{}, cfg.seed);
  const FeatureStats stats = fit_segment_stats(ev.segments);
  const auto encoder = cfg.pretrain_enabled ? load_encoder_if_present(cfg) : std::nullopt;
  ev.embedded = embed_segments(ev.segments, stats, encoder ? &*encoder : nullptr);
  ev.model = load_labeler(stage_path(cfg, "iterate", "model.txt"));

  std::vector<SegmentKey> keys;
  for (const auto& s : ev.segments) keys.push_back(s.key);
  ev.final_labels =
      align_labels(load_labels(stage_path(cfg, "iterate", "labels_final.txt")), keys);

  const std::size_t n_train = static_cast<std::size_t>(
      cfg.train_fraction * static_cast<double>(ev.ctx.entries.size()));
  for (std::size_t i = 0; i < n_train; ++i)
    ev.train_frames.insert(ev.ctx.entries[i].frame_id);
  return ev;
}

struct EvalOutcome {
  ClusterMapping mapping;
  ApReport report;
  std::size_t n_detections = 0;
};

// Mapping is fit on training-split segments; AP is scored on the held-out
// frames only.
inline EvalOutcome evaluate_labels(const PipelineConfig& cfg, const EvalInputs& ev,
                                   const std::vector<int>& labels, double eta) {
  std::vector<GroundTruthBox> usable_gt;
  for (const auto& g : ev.ctx.gt)
    if (!cfg.exclude_occluded_gt || !g.heavily_occluded) usable_gt.push_back(g);

  std::vector<int> train_labels, train_gt;
  for (std::size_t i = 0; i < ev.segments.size(); ++i) {
    if (!ev.train_frames.count(ev.segments[i].key.frame_id)) continue;
    train_labels.push_back(labels[i]);
    train_gt.push_back(
        assign_gt_to_segment(ev.segments[i].key.frame_id, ev.segments[i].bbox, usable_gt));
  }

  EvalOutcome out;
  out.mapping = build_cluster_mapping(train_labels, train_gt);

  // detections on held-out frames
  const Eigen::MatrixXd scores = ev.model.scores_batch(ev.embedded);
  std::map<std::string, std::vector<ScoredBox>> per_frame;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const auto& seg = ev.segments[i];
    if (ev.train_frames.count(seg.key.frame_id)) continue;
    int best = 0;
    double best_score = -1.0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c)
      if (scores(i, c) > best_score) {
        best_score = scores(i, c);
        best = static_cast<int>(c) + 1;
      }
    if (best_score < eta) continue;
    per_frame[seg.key.frame_id].push_back({seg.bbox, best_score, best});
  }

  std::vector<Detection> dets;
  for (auto& [frame_id, boxes] : per_frame)
    for (const auto& b : class_agnostic_nms(std::move(boxes), cfg.nms_iou)) {
      const int cat = out.mapping.category_of(b.cluster_id);
      if (cat == kOthersCategory) continue;
      dets.push_back({frame_id, b.bbox, b.score, cat});
    }
  out.n_detections = dets.size();

  std::vector<GroundTruthBox> test_gt;
  for (const auto& g : usable_gt)
    if (!ev.train_frames.count(g.frame_id)) test_gt.push_back(g);
  out.report = average_precision(dets, test_gt);
  return out;
}

inline nlohmann::json ap_report_json(const ApReport& r) {
  nlohmann::json per_cat = nlohmann::json::object();
  for (const auto& [cat, ap] : r.ap_per_category) per_cat[std::to_string(cat)] = ap;
  return nlohmann::json{{"mean_ap", r.mean_ap},
                        {"ap_small", r.ap_small},
                        {"ap_medium", r.ap_medium},
                        {"ap_large", r.ap_large},
                        {"ap_per_category", per_cat}};
}

inline void stage_eval(const PipelineConfig& cfg) {
  const EvalInputs ev = load_eval_inputs(cfg);
  const EvalOutcome out = evaluate_labels(cfg, ev, ev.final_labels, cfg.labeler.eta);

  nlohmann::json j = ap_report_json(out.report);
  j["training_error_rate"] = out.mapping.training_error_rate;
  j["n_detections"] = out.n_detections;
  std::ofstream report(stage_path(cfg, "eval", "ap_report.json"));
  report << j.dump(2) << '\n';

  std::ofstream mapping(stage_path(cfg, "eval", "mapping.txt"));
  for (const auto& [cluster, cat] : out.mapping.map) mapping << cluster << ' ' << cat << '\n';
  log_info("eval: mean AP " + std::to_string(out.report.mean_ap) + " over " +
           std::to_string(out.n_detections) + " detections");
}

// --- sweep-eta stage ---------------------------------------------------------

inline void stage_sweep_eta(const PipelineConfig& cfg) {
  const EvalInputs ev = load_eval_inputs(cfg);
  std::ofstream csv(stage_path(cfg, "sweep_eta", "sweep.csv"));
  csv << "eta,n_foreground,non_empty_clusters,mean_ap\n";
  csv.precision(17);
  for (double eta : cfg.eta_sweep) {
    const std::vector<int> labels = assign_labels(ev.model, ev.embedded, eta);
    std::vector<SegmentLabel> records(ev.segments.size());
    for (std::size_t i = 0; i < ev.segments.size(); ++i)
      records[i] = {ev.segments[i].key, labels[i]};
    std::ostringstream name;
    name << "labels_eta_" << eta << ".txt";
    save_labels(records, stage_path(cfg, "sweep_eta", name.str()));

    const EvalOutcome out = evaluate_labels(cfg, ev, labels, eta);
    const ClusterStats stats = cluster_histogram_stats(labels);
    std::size_t fg = 0;
    for (int y : labels) fg += y > 0;
    csv << eta << ',' << fg << ',' << stats.non_empty << ',' << out.report.mean_ap << '\n';
    log_info("sweep-eta " + std::to_string(eta) + ": mean AP " +
             std::to_string(out.report.mean_ap));
  }
}

// --- stats stage -------------------------------------------------------------

namespace detail {

inline void draw_line(Image& img, int x0, int y0, int x1, int y1, std::uint8_t r,
                      std::uint8_t g, std::uint8_t b) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 >= 0 && x0 < img.width && y0 >= 0 && y0 < img.height) img.set(x0, y0, r, g, b);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

inline void draw_rect(Image& img, const BBox2D& b, std::uint8_t r, std::uint8_t g,
                      std::uint8_t bl) {
  const int x0 = static_cast<int>(std::lround(b.x_min));
  const int y0 = static_cast<int>(std::lround(b.y_min));
  const int x1 = static_cast<int>(std::lround(b.x_max));
  const int y1 = static_cast<int>(std::lround(b.y_max));
  draw_line(img, x0, y0, x1, y0, r, g, bl);
  draw_line(img, x1, y0, x1, y1, r, g, bl);
  draw_line(img, x1, y1, x0, y1, r, g, bl);
  draw_line(img, x0, y1, x0, y0, r, g, bl);
}

// One polyline per series on a white canvas with a thin frame.
inline Image plot_series(const std::vector<std::vector<double>>& series, int width,
                         int height) {
  Image img(width, height);
  std::fill(img.pixels.begin(), img.pixels.end(), 255);
  const std::array<std::array<std::uint8_t, 3>, 4> palette{
      {{200, 40, 40}, {40, 110, 200}, {40, 160, 70}, {150, 60, 170}}};
  double hi = 1.0;
  for (const auto& s : series)
    for (double v : s) hi = std::max(hi, v);
  const int m = 10;  // margin
  draw_line(img, m, m, m, height - m, 0, 0, 0);
  draw_line(img, m, height - m, width - m, height - m, 0, 0, 0);
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.size() < 2) continue;
    const auto& col = palette[si % palette.size()];
    for (std::size_t i = 1; i < s.size(); ++i) {
      const auto px = [&](std::size_t k) {
        return m + static_cast<int>((width - 2.0 * m) * k / (s.size() - 1));
      };
      const auto py = [&](double v) {
        return height - m - static_cast<int>((height - 2.0 * m) * v / hi);
      };
      draw_line(img, px(i - 1), py(s[i - 1]), px(i), py(s[i]), col[0], col[1], col[2]);
    }
  }
  return img;
}

}  // namespace detail

inline void stage_stats(const PipelineConfig& cfg) {
  std::ifstream in(stage_path(cfg, "iterate", "reports.jsonl"));
  if (!in)
    throw std::runtime_error("cannot open iteration reports (run `iterate` first)");
  std::vector<double> non_empty, cover90, cover80, foreground;
  std::ofstream csv(stage_path(cfg, "stats", "clusters.csv"));
  csv << "round,n_foreground,n_background,non_empty_clusters,clusters_covering_90,"
         "clusters_covering_80\n";
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    csv << j.at("round").get<int>() << ',' << j.at("n_foreground").get<std::size_t>() << ','
        << j.at("n_background").get<std::size_t>() << ','
        << j.at("non_empty_clusters").get<std::size_t>() << ','
        << j.at("clusters_covering_90").get<std::size_t>() << ','
        << j.at("clusters_covering_80").get<std::size_t>() << '\n';
    non_empty.push_back(j.at("non_empty_clusters").get<double>());
    cover90.push_back(j.at("clusters_covering_90").get<double>());
    cover80.push_back(j.at("clusters_covering_80").get<double>());
    foreground.push_back(j.at("n_foreground").get<double>());
  }
  save_png(detail::plot_series({non_empty, cover90, cover80}, 480, 320),
           stage_path(cfg, "stats", "cluster_curves.png"));
  save_png(detail::plot_series({foreground}, 480, 320),
           stage_path(cfg, "stats", "foreground_curve.png"));
  log_info("stats: " + std::to_string(non_empty.size()) + " rounds summarized");
}

// --- overlay stage -----------------------------------------------------------

inline void stage_overlay(const PipelineConfig& cfg) {
  const DatasetContext ctx = load_dataset_context(cfg);
  const auto anns = load_pseudo_annotations(stage_path(cfg, "export", "annotations.jsonl"));
  std::map<std::string, std::vector<const PseudoAnnotation*>> by_frame;
  for (const auto& a : anns) by_frame[a.frame_id].push_back(&a);

  const std::array<std::array<std::uint8_t, 3>, 8> palette{
      {{230, 60, 60}, {60, 140, 230}, {60, 200, 90}, {230, 180, 40},
       {180, 70, 200}, {40, 200, 200}, {230, 120, 40}, {150, 150, 150}}};
  int drawn = 0;
  for (const auto& entry : ctx.entries) {
    if (drawn >= cfg.overlay_frames) break;
    Image img = load_png(entry.image_path);
    for (const PseudoAnnotation* a : by_frame[entry.frame_id]) {
      const auto& col = palette[static_cast<std::size_t>(a->cluster_id) % palette.size()];
      detail::draw_rect(img, a->bbox, col[0], col[1], col[2]);
    }
    save_png(img, stage_path(cfg, "overlay", entry.frame_id + ".png"));
    ++drawn;
  }
  log_info("overlay: " + std::to_string(drawn) + " frames rendered");
}

}  // namespace lidarseed

#endif  // LIDARSEED_STAGES_HPP
