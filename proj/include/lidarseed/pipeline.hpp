#ifndef LIDARSEED_PIPELINE_HPP
#define LIDARSEED_PIPELINE_HPP

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarseed/contrastive.hpp"
#include "lidarseed/eval.hpp"
#include "lidarseed/features.hpp"
#include "lidarseed/geometry.hpp"
#include "lidarseed/kmeans.hpp"
#include "lidarseed/labeler.hpp"
#include "lidarseed/pseudo.hpp"
#include "lidarseed/range_image.hpp"
#include "lidarseed/synth.hpp"

namespace lidarseed {

struct FrameBundle {
  PointCloud cloud;
  Image image;
  std::vector<int> source_ids;  // empty when the dataset carries no oracle ids
  std::vector<SegmentProposal> proposals;
};

inline FrameBundle load_frame(const ManifestEntry& entry, bool with_source_ids = false) {
  FrameBundle f;
  f.cloud = load_cloud(entry.cloud_path, entry.frame_id);
  f.image = load_png(entry.image_path);
  if (with_source_ids) f.source_ids = load_source_ids(entry.ids_path);
  return f;
}

// Segment every frame; frames where no proposal survives are skipped.
inline void segment_frames(std::vector<FrameBundle>& frames, const CameraModel& cam,
                           const BeamConfig& beams, const SegmentationParams& params,
                           std::size_t* n_empty = nullptr) {
  for (auto& f : frames) {
    try {
      f.proposals = extract_segments(f.cloud, cam, beams, params);
    } catch (const EmptyFrameError&) {
      f.proposals.clear();
      if (n_empty) ++*n_empty;
    }
  }
}

inline Eigen::VectorXd raw_feature(const FrameBundle& frame, const SegmentProposal& seg) {
  Eigen::VectorXd v(kFeatureDim);
  v.head(kShapeDim) = shape_descriptor(gather_points(frame.cloud, seg.point_indices));
  v.tail(kAppearanceDim) = appearance_descriptor(frame.image, seg.bbox);
  return v;
}

struct FeatureTable {
  std::vector<SegmentKey> keys;
  std::vector<std::pair<std::size_t, std::size_t>> locations;  // (frame idx, proposal idx)
  Eigen::MatrixXd raw;           // N x kFeatureDim
  FeatureStats stats;
  Eigen::MatrixXd standardized;  // N x kFeatureDim
};

// Descriptor pass over every proposal. Segments whose patch degenerates are
// dropped from the table (and thus from the whole pipeline).
inline FeatureTable compute_feature_table(const std::vector<FrameBundle>& frames) {
  FeatureTable table;
  std::vector<Eigen::VectorXd> rows;
  for (std::size_t fi = 0; fi < frames.size(); ++fi) {
    for (std::size_t pi = 0; pi < frames[fi].proposals.size(); ++pi) {
      const auto& seg = frames[fi].proposals[pi];
      try {
        rows.push_back(raw_feature(frames[fi], seg));
      } catch (const DegeneratePatchError&) {
        continue;
      }
      table.keys.push_back({seg.frame_id, seg.segment_id});
      table.locations.emplace_back(fi, pi);
    }
  }
  if (rows.empty()) throw std::runtime_error("no usable segments in dataset");
  table.raw.resize(rows.size(), kFeatureDim);
  for (std::size_t i = 0; i < rows.size(); ++i) table.raw.row(i) = rows[i].transpose();
  table.stats = FeatureStats::fit(table.raw);
  table.standardized.resizeLike(table.raw);
  for (Eigen::Index i = 0; i < table.raw.rows(); ++i)
    table.standardized.row(i) = table.stats.apply(table.raw.row(i).transpose()).transpose();
  return table;
}

inline Eigen::MatrixXd encode_rows(const ContrastiveEncoder& enc, const Eigen::MatrixXd& rows) {
  return enc.net.predict(rows);
}

constexpr int kDefaultJittersPerSegment = 8;
constexpr int kMaxDegenerateRedraws = 50;

// Jitter draw for one segment: box jitter, point trim, descriptors of the
// jittered geometry, standardization, optional encoding. Degenerate draws
// (empty trimmed segment or sub-4px^2 patch) are redrawn.
inline std::optional<JitterFeature> draw_jitter_feature(
    const FrameBundle& frame, const SegmentProposal& seg, const CameraModel& cam,
    const FeatureStats& stats, const ContrastiveEncoder* encoder, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < kMaxDegenerateRedraws; ++attempt) {
    const JitterGeometry geo = jitter_box(seg.bbox, rng);
    const auto kept = jitter_segment(frame.cloud, seg.point_indices, geo.bbox, cam);
    if (kept.empty()) continue;
    Eigen::VectorXd v(kFeatureDim);
    v.head(kShapeDim) = shape_descriptor(gather_points(frame.cloud, kept));
    try {
      v.tail(kAppearanceDim) = appearance_descriptor(frame.image, geo.bbox);
    } catch (const DegeneratePatchError&) {
      continue;
    }
    Eigen::VectorXd x = stats.apply(v);
    if (encoder) x = encoder->encode(x);
    return JitterFeature{std::move(x), geo.z_hat};
  }
  return std::nullopt;
}

// Full training table: per-segment embedded feature plus precomputed jitter
// draws. The geometric draws are label-independent, so one pass serves every
// round.
inline std::vector<SegmentTrainingData> make_training_data(
    const std::vector<FrameBundle>& frames, const FeatureTable& table,
    const CameraModel& cam, const ContrastiveEncoder* encoder, int jitters_per_segment,
    std::mt19937_64& rng) {
  std::vector<SegmentTrainingData> data;
  data.reserve(table.keys.size());
  for (std::size_t i = 0; i < table.keys.size(); ++i) {
    const auto [fi, pi] = table.locations[i];
    const auto& frame = frames[fi];
    const auto& seg = frame.proposals[pi];
    SegmentTrainingData d;
    d.key = table.keys[i];
    Eigen::VectorXd x = table.standardized.row(i).transpose();
    d.feature = encoder ? encoder->encode(x) : x;
    for (int j = 0; j < jitters_per_segment; ++j) {
      auto draw = draw_jitter_feature(frame, seg, cam, table.stats, encoder, rng);
      if (draw) d.jitters.push_back(std::move(*draw));
    }
    data.push_back(std::move(d));
  }
  return data;
}

inline Eigen::MatrixXd training_feature_matrix(const std::vector<SegmentTrainingData>& data) {
  Eigen::MatrixXd m(data.size(), data.empty() ? 0 : data.front().feature.size());
  for (std::size_t i = 0; i < data.size(); ++i) m.row(i) = data[i].feature.transpose();
  return m;
}

// --- detections and evaluation ----------------------------------------------

constexpr double kNmsIouThreshold = 0.3;

// Foreground-labeled segments become scored detections: score = max class
// probability, then class-agnostic NMS per frame.
inline std::vector<ScoredBox> make_detections(const std::vector<FrameBundle>& frames,
                                              const FeatureTable& table,
                                              const Eigen::MatrixXd& embedded,
                                              const LabelerModel& model, double eta,
                                              std::vector<std::string>* frame_of_detection,
                                              double nms_iou = kNmsIouThreshold) {
  const Eigen::MatrixXd scores = model.scores_batch(embedded);
  std::map<std::string, std::vector<ScoredBox>> per_frame;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    double best_score = -1.0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (scores(i, c) > best_score) {
        best_score = scores(i, c);
        best = static_cast<int>(c) + 1;
      }
    }
    if (best_score < eta) continue;
    const auto [fi, pi] = table.locations[i];
    per_frame[table.keys[i].frame_id].push_back(
        {frames[fi].proposals[pi].bbox, best_score, best});
  }
  std::vector<ScoredBox> out;
  if (frame_of_detection) frame_of_detection->clear();
  for (auto& [frame_id, dets] : per_frame) {
    for (auto& d : class_agnostic_nms(std::move(dets), nms_iou)) {
      out.push_back(d);
      if (frame_of_detection) frame_of_detection->push_back(frame_id);
    }
  }
  return out;
}

inline std::vector<Detection> map_detections(const std::vector<ScoredBox>& boxes,
                                             const std::vector<std::string>& frame_ids,
                                             const ClusterMapping& mapping) {
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const int cat = mapping.category_of(boxes[i].cluster_id);
    if (cat == kOthersCategory) continue;  // unmapped clusters don't score
    dets.push_back({frame_ids[i], boxes[i].bbox, boxes[i].score, cat});
  }
  return dets;
}

// Majority-vote mapping fit on (typically training-split) segments.
inline ClusterMapping fit_cluster_mapping(const std::vector<FrameBundle>& frames,
                                          const FeatureTable& table,
                                          const std::vector<int>& labels,
                                          const std::vector<GroundTruthBox>& gt,
                                          bool exclude_occluded_gt = false) {
  std::vector<GroundTruthBox> usable;
  for (const auto& g : gt)
    if (!exclude_occluded_gt || !g.heavily_occluded) usable.push_back(g);
  std::vector<int> segment_gt(table.keys.size());
  for (std::size_t i = 0; i < table.keys.size(); ++i) {
    const auto [fi, pi] = table.locations[i];
    segment_gt[i] =
        assign_gt_to_segment(table.keys[i].frame_id, frames[fi].proposals[pi].bbox, usable);
  }
  return build_cluster_mapping(labels, segment_gt);
}

}  // namespace lidarseed

#endif  // LIDARSEED_PIPELINE_HPP
