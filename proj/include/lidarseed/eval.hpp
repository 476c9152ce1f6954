#ifndef LIDARSEED_EVAL_HPP
#define LIDARSEED_EVAL_HPP

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarseed/geometry.hpp"

namespace lidarseed {

constexpr int kOthersCategory = 0;  // "others" sentinel in cluster mappings

struct GroundTruthBox {
  std::string frame_id;
  BBox2D bbox;
  int category = 0;  // 1..K
  bool heavily_occluded = false;
};

// A segment gets the category of its highest-IoU GT box when that IoU is
// strictly above 0.5, otherwise "others".
inline int assign_gt_to_segment(const std::string& frame_id, const BBox2D& seg_box,
                                const std::vector<GroundTruthBox>& gt) {
  double best_iou = 0.0;
  int best_cat = kOthersCategory;
  for (const auto& g : gt) {
    if (g.frame_id != frame_id) continue;
    const double iou = box_iou(seg_box, g.bbox);
    if (iou > best_iou || (iou == best_iou && best_cat != kOthersCategory &&
                           g.category < best_cat && iou > 0.5)) {
      best_iou = iou;
      best_cat = g.category;
    }
  }
  return best_iou > 0.5 ? best_cat : kOthersCategory;
}

struct ClusterMapping {
  std::map<int, int> map;  // cluster_id -> category, kOthersCategory = others
  double training_error_rate = 0.0;

  int category_of(int cluster_id) const {
    const auto it = map.find(cluster_id);
    return it == map.end() ? kOthersCategory : it->second;
  }
};

// Per-cluster majority vote over the segments' GT-or-others assignments; the
// independent per-cluster majority minimizes total error for a many-to-one
// map. Ties break to "others", then lowest category id.
inline ClusterMapping build_cluster_mapping(const std::vector<int>& cluster_labels,
                                            const std::vector<int>& segment_gt) {
  if (cluster_labels.size() != segment_gt.size())
    throw std::invalid_argument("build_cluster_mapping: size mismatch");
  std::map<int, std::map<int, int>> votes;  // cluster -> category -> count
  std::map<int, int> totals;
  for (std::size_t i = 0; i < cluster_labels.size(); ++i) {
    if (cluster_labels[i] <= 0) continue;  // background segments don't vote
    ++votes[cluster_labels[i]][segment_gt[i]];
    ++totals[cluster_labels[i]];
  }

  ClusterMapping mapping;
  std::size_t errors = 0, total = 0;
  for (const auto& [cluster, tally] : votes) {
    int best_cat = kOthersCategory;
    int best_count = -1;
    for (const auto& [cat, count] : tally) {
      const bool better =
          count > best_count ||
          (count == best_count &&
           (cat == kOthersCategory ||
            (best_cat != kOthersCategory && cat < best_cat)));
      if (better) {
        best_cat = cat;
        best_count = count;
      }
    }
    mapping.map[cluster] = best_cat;
    errors += totals[cluster] - best_count;
    total += totals[cluster];
  }
  mapping.training_error_rate = total > 0 ? static_cast<double>(errors) / total : 0.0;
  return mapping;
}

// --- average precision -------------------------------------------------------

struct Detection {
  std::string frame_id;
  BBox2D bbox;
  double score = 0.0;
  int category = 0;  // post-mapping; kOthersCategory entries are dropped
};

struct ApReport {
  std::map<int, double> ap_per_category;
  double mean_ap = 0.0;
  double ap_small = 0.0;   // gt area < 32^2
  double ap_medium = 0.0;  // 32^2 .. 96^2
  double ap_large = 0.0;   // > 96^2
};

namespace detail {

enum class SizeBucket { all, small, medium, large };

inline SizeBucket bucket_of(double area) {
  if (area < 32.0 * 32.0) return SizeBucket::small;
  if (area <= 96.0 * 96.0) return SizeBucket::medium;
  return SizeBucket::large;
}

// Greedy one-to-one matching by descending score; all-point interpolated AP.
inline double ap_single(const std::vector<Detection>& dets,
                        const std::vector<GroundTruthBox>& gt, double iou_thresh,
                        SizeBucket bucket) {
  std::vector<const GroundTruthBox*> gts;
  for (const auto& g : gt)
    if (bucket == SizeBucket::all || bucket_of(g.bbox.area()) == bucket)
      gts.push_back(&g);
  if (gts.empty()) return 0.0;

  std::vector<Detection> sorted = dets;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });

  std::vector<bool> matched(gts.size(), false);
  std::vector<int> tp;  // 1 = true positive in rank order
  tp.reserve(sorted.size());
  for (const auto& d : sorted) {
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (matched[j] || gts[j]->frame_id != d.frame_id) continue;
      const double iou = box_iou(d.bbox, gts[j]->bbox);
      if (iou >= best_iou) {
        best_iou = iou;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      matched[best] = true;
      tp.push_back(1);
    } else {
      // In a size bucket, detections that match a GT outside the bucket are
      // ignored rather than counted as false positives.
      if (bucket != SizeBucket::all) {
        bool hits_other = false;
        for (const auto& g : gt) {
          if (g.frame_id != d.frame_id || bucket_of(g.bbox.area()) == bucket) continue;
          if (box_iou(d.bbox, g.bbox) >= iou_thresh) { hits_other = true; break; }
        }
        if (hits_other) continue;
      }
      tp.push_back(0);
    }
  }

  // Precision-recall curve, area under the interpolated envelope.
  const double n_gt = static_cast<double>(gts.size());
  std::vector<double> precision, recall;
  int cum_tp = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    cum_tp += tp[i];
    precision.push_back(static_cast<double>(cum_tp) / static_cast<double>(i + 1));
    recall.push_back(cum_tp / n_gt);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    double p_max = 0.0;
    for (std::size_t j = i; j < precision.size(); ++j) p_max = std::max(p_max, precision[j]);
    ap += (recall[i] - prev_recall) * p_max;
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace detail

// Per-category AP@iou_thresh plus COCO-style S/M/L breakdown over all
// categories together. Detections must already be category-mapped; "others"
// detections are excluded before calling.
inline ApReport average_precision(const std::vector<Detection>& dets,
                                  const std::vector<GroundTruthBox>& gt,
                                  double iou_thresh = 0.5) {
  ApReport report;
  std::map<int, std::vector<Detection>> dets_by_cat;
  std::map<int, std::vector<GroundTruthBox>> gt_by_cat;
  for (const auto& d : dets)
    if (d.category != kOthersCategory) dets_by_cat[d.category].push_back(d);
  for (const auto& g : gt) gt_by_cat[g.category].push_back(g);

  double sum = 0.0;
  for (const auto& [cat, cat_gt] : gt_by_cat) {
    const auto it = dets_by_cat.find(cat);
    static const std::vector<Detection> none;
    const double ap = detail::ap_single(it != dets_by_cat.end() ? it->second : none,
                                        cat_gt, iou_thresh, detail::SizeBucket::all);
    report.ap_per_category[cat] = ap;
    sum += ap;
  }
  if (!gt_by_cat.empty()) report.mean_ap = sum / static_cast<double>(gt_by_cat.size());

  auto bucket_ap = [&](detail::SizeBucket bucket) {
    double total = 0.0;
    int cats = 0;
    for (const auto& [cat, cat_gt] : gt_by_cat) {
      bool any = false;
      for (const auto& g : cat_gt)
        if (detail::bucket_of(g.bbox.area()) == bucket) { any = true; break; }
      if (!any) continue;
      const auto it = dets_by_cat.find(cat);
      static const std::vector<Detection> none;
      total += detail::ap_single(it != dets_by_cat.end() ? it->second : none, cat_gt,
                                 iou_thresh, bucket);
      ++cats;
    }
    return cats > 0 ? total / cats : 0.0;
  };
  report.ap_small = bucket_ap(detail::SizeBucket::small);
  report.ap_medium = bucket_ap(detail::SizeBucket::medium);
  report.ap_large = bucket_ap(detail::SizeBucket::large);
  return report;
}

// --- cluster distribution statistics ----------------------------------------

struct ClusterStats {
  std::size_t non_empty = 0;
  std::size_t covering_90 = 0;  // smallest prefix of descending sizes >= 90%
  std::size_t covering_80 = 0;
};

inline ClusterStats cluster_histogram_stats(const std::vector<int>& labels) {
  std::map<int, std::size_t> counts;
  std::size_t total = 0;
  for (int y : labels) {
    if (y <= 0) continue;
    ++counts[y];
    ++total;
  }
  ClusterStats stats;
  stats.non_empty = counts.size();
  if (total == 0) return stats;

  std::vector<std::size_t> sizes;
  for (const auto& [_, c] : counts) sizes.push_back(c);
  std::sort(sizes.rbegin(), sizes.rend());

  auto coverage = [&](double share) {
    const double target = share * static_cast<double>(total);
    std::size_t acc = 0, n = 0;
    for (std::size_t s : sizes) {
      acc += s;
      ++n;
      if (static_cast<double>(acc) >= target - 1e-9) break;
    }
    return n;
  };
  stats.covering_90 = coverage(0.9);
  stats.covering_80 = coverage(0.8);
  return stats;
}

}  // namespace lidarseed

#endif  // LIDARSEED_EVAL_HPP
