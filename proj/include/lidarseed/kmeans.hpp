#ifndef LIDARSEED_KMEANS_HPP
#define LIDARSEED_KMEANS_HPP

#include <Eigen/Dense>

#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidarseed {

struct KMeansModel {
  Eigen::MatrixXd centroids;          // C x D; empty clusters keep their last position
  std::vector<bool> cluster_alive;    // owns >= 1 point in the final assignment
  std::vector<double> objective_trace;  // per-iteration sum of squared distances
  int max_clusters = 0;
};

struct KMeansResult {
  KMeansModel model;
  std::vector<int> assignments;  // 0-based cluster per row
};

namespace detail {

inline int nearest_centroid(const Eigen::MatrixXd& centroids,
                            const std::vector<bool>& alive,
                            const Eigen::VectorXd& x, double* dist2 = nullptr) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    if (!alive[c]) continue;
    const double d = (centroids.row(c).transpose() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Runs to assignment fixpoint or
// max_iters. Clusters that lose all points keep their centroid but never
// regain points unless they win one outright (no re-seeding).
inline KMeansResult kmeans(const Eigen::MatrixXd& features, int n_clusters, int max_iters,
                           std::uint64_t seed) {
  const Eigen::Index n = features.rows();
  if (n < 1) throw std::invalid_argument("kmeans: need >= 1 row");
  if (n_clusters < 1) throw std::invalid_argument("kmeans: need >= 1 cluster");
  std::mt19937_64 rng(seed);

  KMeansResult res;
  res.model.max_clusters = n_clusters;
  const int k = std::min<int>(n_clusters, static_cast<int>(n));
  res.model.centroids = Eigen::MatrixXd::Zero(n_clusters, features.cols());
  res.model.cluster_alive.assign(n_clusters, false);

  if (static_cast<Eigen::Index>(n_clusters) >= n) {
    // More clusters than points: every point gets its own singleton.
    res.assignments.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      res.model.centroids.row(i) = features.row(i);
      res.model.cluster_alive[i] = true;
      res.assignments[i] = static_cast<int>(i);
    }
    res.model.objective_trace.push_back(0.0);
    return res;
  }

  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  res.model.centroids.row(0) = features.row(first(rng));
  res.model.cluster_alive[0] = true;
  std::vector<double> d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      detail::nearest_centroid(res.model.centroids.topRows(c),
                               std::vector<bool>(c, true), features.row(i).transpose(),
                               &d2[i]);
      total += d2[i];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target) { pick = i; break; }
      }
    } else {
      std::uniform_int_distribution<Eigen::Index> any(0, n - 1);
      pick = any(rng);
    }
    res.model.centroids.row(c) = features.row(pick);
    res.model.cluster_alive[c] = true;
  }

  res.assignments.assign(n, -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double dist2 = 0.0;
      const int c = detail::nearest_centroid(res.model.centroids, res.model.cluster_alive,
                                             features.row(i).transpose(), &dist2);
      objective += dist2;
      if (c != res.assignments[i]) {
        res.assignments[i] = c;
        changed = true;
      }
    }
    res.model.objective_trace.push_back(objective);
    if (!changed) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_clusters, features.cols());
    std::vector<Eigen::Index> counts(n_clusters, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.assignments[i]) += features.row(i);
      ++counts[res.assignments[i]];
    }
    for (int c = 0; c < n_clusters; ++c)
      if (counts[c] > 0)
        res.model.centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
  }

  std::fill(res.model.cluster_alive.begin(), res.model.cluster_alive.end(), false);
  for (int a : res.assignments) res.model.cluster_alive[a] = true;
  return res;
}

// --- segment labels ----------------------------------------------------------

struct SegmentKey {
  std::string frame_id;
  int segment_id = 0;

  bool operator<(const SegmentKey& o) const {
    return frame_id != o.frame_id ? frame_id < o.frame_id : segment_id < o.segment_id;
  }
  bool operator==(const SegmentKey& o) const {
    return frame_id == o.frame_id && segment_id == o.segment_id;
  }
};

struct SegmentLabel {
  SegmentKey ref;
  int y = 0;  // 0 = background, 1..C = cluster
};

// Initialization assigns every segment a 1-based cluster index; label 0 never
// appears here.
inline std::vector<SegmentLabel> init_labels(const Eigen::MatrixXd& features,
                                             const std::vector<SegmentKey>& keys, int C,
                                             int max_iters, std::uint64_t seed) {
  if (features.rows() != static_cast<Eigen::Index>(keys.size()))
    throw std::invalid_argument("init_labels: feature/key count mismatch");
  const KMeansResult km = kmeans(features, C, max_iters, seed);
  std::vector<SegmentLabel> labels(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i)
    labels[i] = {keys[i], km.assignments[i] + 1};
  return labels;
}

// Line-delimited text records: "frame_id segment_id y".
inline void save_labels(const std::vector<SegmentLabel>& labels, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write label file: " + path);
  for (const auto& l : labels)
    out << l.ref.frame_id << ' ' << l.ref.segment_id << ' ' << l.y << '\n';
}

inline std::vector<SegmentLabel> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label file: " + path);
  std::vector<SegmentLabel> labels;
  SegmentLabel l;
  while (in >> l.ref.frame_id >> l.ref.segment_id >> l.y) labels.push_back(l);
  return labels;
}

}  // namespace lidarseed

#endif  // LIDARSEED_KMEANS_HPP
