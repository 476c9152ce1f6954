#ifndef LIDARSEED_PSEUDO_HPP
#define LIDARSEED_PSEUDO_HPP

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarseed/eval.hpp"
#include "lidarseed/geometry.hpp"
#include "lidarseed/kmeans.hpp"
#include "lidarseed/range_image.hpp"

namespace lidarseed {

constexpr const char* kAnnotationSchemaVersion = "lidarseed-annotations-v1";

struct PseudoAnnotation {
  std::string frame_id;
  BBox2D bbox;
  int cluster_id = 0;  // >= 1
};

struct DanglingLabelError : std::runtime_error {
  explicit DanglingLabelError(const SegmentKey& key)
      : std::runtime_error("label references missing proposal " + key.frame_id + "/" +
                          std::to_string(key.segment_id)) {}
};

struct ExportSummary {
  std::size_t n_foreground = 0;
  std::size_t n_background = 0;
};

// One record per foreground-labeled segment, ordered by (frame_id, segment_id).
inline std::pair<std::vector<PseudoAnnotation>, ExportSummary> collect_pseudo_annotations(
    const std::vector<SegmentLabel>& labels,
    const std::map<SegmentKey, SegmentProposal>& proposals) {
  std::vector<SegmentLabel> sorted = labels;
  std::sort(sorted.begin(), sorted.end(),
            [](const SegmentLabel& a, const SegmentLabel& b) { return a.ref < b.ref; });
  std::vector<PseudoAnnotation> anns;
  ExportSummary summary;
  for (const auto& l : sorted) {
    const auto it = proposals.find(l.ref);
    if (it == proposals.end()) throw DanglingLabelError(l.ref);
    if (l.y == 0) {
      ++summary.n_background;
      continue;
    }
    anns.push_back({l.ref.frame_id, it->second.bbox, l.y});
    ++summary.n_foreground;
  }
  return {anns, summary};
}

// Line-delimited JSON {frame, x1, y1, x2, y2, cluster}; sidecar <path>.schema
// holds the schema version.
inline void save_pseudo_annotations(const std::vector<PseudoAnnotation>& anns,
                                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write annotations: " + path);
  for (const auto& a : anns) {
    nlohmann::json j{{"frame", a.frame_id}, {"x1", a.bbox.x_min}, {"y1", a.bbox.y_min},
                     {"x2", a.bbox.x_max}, {"y2", a.bbox.y_max}, {"cluster", a.cluster_id}};
    out << j.dump() << '\n';
  }
  std::ofstream schema(path + ".schema");
  schema << kAnnotationSchemaVersion << '\n';
}

inline std::vector<PseudoAnnotation> load_pseudo_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotations: " + path);
  std::vector<PseudoAnnotation> anns;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    anns.push_back({j.at("frame").get<std::string>(),
                    {j.at("x1").get<double>(), j.at("y1").get<double>(),
                     j.at("x2").get<double>(), j.at("y2").get<double>()},
                    j.at("cluster").get<int>()});
  }
  return anns;
}

inline ExportSummary export_pseudo_annotations(
    const std::vector<SegmentLabel>& labels,
    const std::map<SegmentKey, SegmentProposal>& proposals, const std::string& path) {
  auto [anns, summary] = collect_pseudo_annotations(labels, proposals);
  save_pseudo_annotations(anns, path);
  return summary;
}

// Negative proposals for detector training: keep p iff its best IoU against
// the pseudo boxes lands in [0.1, 0.5). Disjoint proposals are excluded so
// missed foreground objects are unlikely to be sampled as negatives.
inline std::vector<BBox2D> filter_negative_proposals(const std::vector<BBox2D>& proposals,
                                                     const std::vector<BBox2D>& pseudo_boxes) {
  std::vector<BBox2D> negatives;
  for (const auto& p : proposals) {
    double best = 0.0;
    for (const auto& g : pseudo_boxes) best = std::max(best, box_iou(p, g));
    if (best >= 0.1 && best < 0.5) negatives.push_back(p);
  }
  return negatives;
}

// --- ground-truth files ------------------------------------------------------

// Same line-delimited JSON schema with "category" instead of "cluster".
inline void save_ground_truth(const std::vector<GroundTruthBox>& gt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ground truth: " + path);
  for (const auto& g : gt) {
    nlohmann::json j{{"frame", g.frame_id},       {"x1", g.bbox.x_min},
                     {"y1", g.bbox.y_min},        {"x2", g.bbox.x_max},
                     {"y2", g.bbox.y_max},        {"category", g.category},
                     {"heavily_occluded", g.heavily_occluded}};
    out << j.dump() << '\n';
  }
}

inline std::vector<GroundTruthBox> load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ground truth: " + path);
  std::vector<GroundTruthBox> gt;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    gt.push_back({j.at("frame").get<std::string>(),
                  {j.at("x1").get<double>(), j.at("y1").get<double>(),
                   j.at("x2").get<double>(), j.at("y2").get<double>()},
                  j.at("category").get<int>(), j.value("heavily_occluded", false)});
  }
  return gt;
}

}  // namespace lidarseed

#endif  // LIDARSEED_PSEUDO_HPP
