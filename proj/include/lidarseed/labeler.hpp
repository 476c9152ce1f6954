#ifndef LIDARSEED_LABELER_HPP
#define LIDARSEED_LABELER_HPP

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarseed/eval.hpp"
#include "lidarseed/features.hpp"
#include "lidarseed/geometry.hpp"
#include "lidarseed/kmeans.hpp"
#include "lidarseed/mlp.hpp"
#include "lidarseed/range_image.hpp"

namespace lidarseed {

constexpr double kJitterIouTolerance = 0.005;
constexpr double kJitterPositiveIou = 0.5;
constexpr int kJitterMaxAttempts = 10000;

struct JitterGeometry {
  BBox2D bbox;
  double iou_target = 0.0;
  double iou_achieved = 0.0;
  int z_hat = 0;  // 1 iff iou_achieved > 0.5
};

// Jitter a box to a target IoU ~ U(0.1, 1.0). Corners are rejection-sampled
// around the originals until the achieved IoU is within +/- 0.005 of the
// target; the sampling window shrinks with the target so tight targets stay
// reachable. A fresh target is drawn after 10,000 failed attempts.
inline JitterGeometry jitter_box(const BBox2D& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> target_dist(0.1, 1.0);
  const double w = b.width();
  const double h = b.height();

  for (;;) {
    const double target = target_dist(rng);
    // Window scale: ~0 for target 1 (identity box), up to 1.5 sides at 0.1.
    const double scale = 1.5 * (1.0 - target) / 0.9;
    std::uniform_real_distribution<double> du(-scale * w, scale * w);
    std::uniform_real_distribution<double> dv(-scale * h, scale * h);
    for (int attempt = 0; attempt < kJitterMaxAttempts; ++attempt) {
      BBox2D cand{b.x_min + du(rng), b.y_min + dv(rng), b.x_max + du(rng),
                  b.y_max + dv(rng)};
      if (!cand.valid()) continue;
      const double iou = box_iou(cand, b);
      if (std::abs(iou - target) <= kJitterIouTolerance)
        return {cand, target, iou, iou > kJitterPositiveIou ? 1 : 0};
    }
  }
}

// Keep exactly the segment points whose projections land inside the jittered
// box; points behind the camera never qualify.
inline std::vector<int> jitter_segment(const PointCloud& cloud,
                                       const std::vector<int>& point_indices,
                                       const BBox2D& jittered_box, const CameraModel& cam) {
  std::vector<int> kept;
  for (int idx : point_indices) {
    const auto px = project_point(cloud.points[idx], cam);
    if (px && jittered_box.contains(px->u, px->v)) kept.push_back(idx);
  }
  return kept;
}

struct JitterSample {
  SegmentKey source_ref;
  BBox2D jittered_bbox;
  std::vector<int> jittered_point_indices;
  double iou_target = 0.0;
  double iou_achieved = 0.0;
  int z_hat = 0;
  int y = 0;  // source segment's label
};

// --- simplified equalization loss -------------------------------------------

constexpr double kProbClamp = 1e-7;

struct EqlResult {
  double loss = 0.0;
  Eigen::VectorXd grad_logits;
};

inline Eigen::VectorXd sigmoid(const Eigen::VectorXd& logits) {
  return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
}

// L = -z log(s_y) - (1-z) sum_c log(1 - s_c).
// Positive samples touch only their own class logit (no competition between
// foreground categories); negatives push every class down.
inline EqlResult eql_loss(const Eigen::VectorXd& probs, int z_hat, int y) {
  const int C = static_cast<int>(probs.size());
  if (y < 1 || y > C) throw std::invalid_argument("eql_loss: y must be in 1..C");
  const Eigen::ArrayXd s =
      probs.array().max(kProbClamp).min(1.0 - kProbClamp);
  EqlResult res;
  res.grad_logits = Eigen::VectorXd::Zero(C);
  if (z_hat == 1) {
    res.loss = -std::log(s[y - 1]);
    res.grad_logits[y - 1] = s[y - 1] - 1.0;
  } else {
    res.loss = -(1.0 - s).log().sum();
    res.grad_logits = s.matrix();
  }
  return res;
}

// --- labeler model -----------------------------------------------------------

struct LabelerModel {
  Mlp net;  // D -> hidden -> C logits
  int n_clusters = 0;

  Eigen::VectorXd scores(const Eigen::VectorXd& feature) const {
    return sigmoid(net.predict(feature.transpose()).row(0).transpose());
  }

  Eigen::MatrixXd scores_batch(const Eigen::MatrixXd& features) const {
    const Eigen::MatrixXd logits = net.predict(features);
    return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
  }
};

inline void save_labeler(const LabelerModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write labeler model: " + path);
  out << m.n_clusters << '\n';
  m.net.save(out);
}

inline LabelerModel load_labeler(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labeler model: " + path);
  LabelerModel m;
  in >> m.n_clusters;
  m.net = Mlp::load(in);
  return m;
}

// --- training ----------------------------------------------------------------

struct LabelerConfig {
  int n_clusters = 10000;  // C
  double eta = 0.95;
  int rounds = 10;
  std::vector<int> hidden_dims{256};
  int batch_size = 128;        // 1:3 positives:negatives within every batch
  int steps = 2000;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct JitterFeature {
  Eigen::VectorXd feature;
  int z_hat = 0;
};

// Per-segment training material: the original (un-jittered) feature scored at
// assignment time, plus precomputed jitter draws sampled during training.
struct SegmentTrainingData {
  SegmentKey key;
  Eigen::VectorXd feature;
  std::vector<JitterFeature> jitters;
};

struct NoForegroundLabelsError : std::runtime_error {
  explicit NoForegroundLabelsError(int round)
      : std::runtime_error("every segment is labeled background (round " +
                          std::to_string(round) + ")"),
        round(round) {}
  int round;
};

// Fresh weights every call. Jitter samples come from foreground-labeled
// segments only; each batch holds exactly batch_size/4 positives.
inline LabelerModel train_labeler(const std::vector<SegmentTrainingData>& data,
                                  const std::vector<int>& labels, const LabelerConfig& cfg,
                                  std::mt19937_64& rng,
                                  std::vector<double>* loss_trace = nullptr,
                                  const Mlp* warm_start_first_layer = nullptr,
                                  int round_index = 0,
                                  std::vector<std::pair<int, int>>* batch_audit = nullptr) {
  if (data.size() != labels.size())
    throw std::invalid_argument("train_labeler: data/label size mismatch");
  struct PoolEntry {
    const Eigen::VectorXd* x;
    int y;
  };
  std::vector<PoolEntry> positives, negatives;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (labels[i] <= 0) continue;  // background segments never feed training
    for (const auto& j : data[i].jitters)
      (j.z_hat == 1 ? positives : negatives).push_back({&j.feature, labels[i]});
  }
  if (positives.empty() || negatives.empty()) throw NoForegroundLabelsError(round_index);

  const int dim = static_cast<int>(data.front().feature.size());
  std::vector<int> dims{dim};
  for (int h : cfg.hidden_dims) dims.push_back(h);
  dims.push_back(cfg.n_clusters);

  LabelerModel model;
  model.n_clusters = cfg.n_clusters;
  model.net = Mlp(dims, rng);
  if (warm_start_first_layer && !warm_start_first_layer->weights().empty() &&
      warm_start_first_layer->weights()[0].rows() == model.net.weights()[0].rows() &&
      warm_start_first_layer->weights()[0].cols() == model.net.weights()[0].cols()) {
    model.net.weights()[0] = warm_start_first_layer->weights()[0];
    model.net.biases()[0] = warm_start_first_layer->biases()[0];
  }

  SgdOptimizer opt(cfg.lr, cfg.momentum, cfg.weight_decay);
  const int n_pos = cfg.batch_size / 4;
  const int n_neg = cfg.batch_size - n_pos;
  std::uniform_int_distribution<std::size_t> pick_pos(0, positives.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_neg(0, negatives.size() - 1);

  Eigen::MatrixXd batch(cfg.batch_size, dim);
  std::vector<int> batch_y(cfg.batch_size), batch_z(cfg.batch_size);

  for (int step = 0; step < cfg.steps; ++step) {
    if (step == cfg.steps / 2 || step == cfg.steps * 3 / 4)
      opt.set_lr(opt.lr() * 0.1);

    for (int i = 0; i < n_pos; ++i) {
      const auto& e = positives[pick_pos(rng)];
      batch.row(i) = e.x->transpose();
      batch_y[i] = e.y;
      batch_z[i] = 1;
    }
    for (int i = 0; i < n_neg; ++i) {
      const auto& e = negatives[pick_neg(rng)];
      batch.row(n_pos + i) = e.x->transpose();
      batch_y[n_pos + i] = e.y;
      batch_z[n_pos + i] = 0;
    }

    if (batch_audit) {
      int z_count = 0;
      for (int z : batch_z) z_count += z;
      batch_audit->emplace_back(z_count, cfg.batch_size - z_count);
    }

    const Eigen::MatrixXd logits = model.net.forward(batch);
    Eigen::MatrixXd grad(cfg.batch_size, cfg.n_clusters);
    double loss = 0.0;
    for (int i = 0; i < cfg.batch_size; ++i) {
      const Eigen::VectorXd probs = sigmoid(logits.row(i).transpose());
      const EqlResult r = eql_loss(probs, batch_z[i], batch_y[i]);
      loss += r.loss;
      grad.row(i) = r.grad_logits.transpose();
    }
    loss /= cfg.batch_size;
    grad /= static_cast<double>(cfg.batch_size);
    if (loss_trace) loss_trace->push_back(loss);

    opt.step(model.net, model.net.backward(grad));
  }
  return model;
}

// Label rule: y = 0 when max_c s_c < eta, else argmax (ties to the lowest
// cluster id).
inline std::vector<int> assign_labels(const LabelerModel& model,
                                      const Eigen::MatrixXd& features, double eta) {
  if (eta <= 0.0 || eta >= 1.0)
    throw std::invalid_argument("assign_labels: eta must be in (0,1)");
  const Eigen::MatrixXd scores = model.scores_batch(features);
  std::vector<int> labels(scores.rows());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    double best_score = -1.0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (scores(i, c) > best_score) {
        best_score = scores(i, c);
        best = static_cast<int>(c) + 1;
      }
    }
    labels[i] = best_score < eta ? 0 : best;
  }
  return labels;
}

// --- iteration loop ----------------------------------------------------------

struct IterationReport {
  int round = 0;
  std::map<int, std::size_t> cluster_histogram;
  std::size_t n_foreground = 0;
  std::size_t n_background = 0;
  ClusterStats stats;
  std::vector<double> loss_trace;
};

inline IterationReport make_report(int round, const std::vector<int>& labels,
                                   std::vector<double> loss_trace) {
  IterationReport report;
  report.round = round;
  report.loss_trace = std::move(loss_trace);
  for (int y : labels) {
    if (y > 0) {
      ++report.cluster_histogram[y];
      ++report.n_foreground;
    } else {
      ++report.n_background;
    }
  }
  report.stats = cluster_histogram_stats(labels);
  return report;
}

struct IterateResult {
  std::vector<int> labels;  // final y per segment, data order
  std::vector<IterationReport> reports;
  LabelerModel final_model;
};

// Alternate train_labeler / assign_labels for cfg.rounds rounds. Round r+1
// trains on round r's labels; the model restarts from scratch each round.
inline IterateResult iterate(const std::vector<SegmentTrainingData>& data,
                             const std::vector<int>& initial_labels, const LabelerConfig& cfg,
                             std::mt19937_64& rng,
                             const Mlp* warm_start_first_layer = nullptr) {
  if (cfg.rounds < 1) throw std::invalid_argument("iterate: rounds must be >= 1");
  Eigen::MatrixXd features(data.size(), data.empty() ? 0 : data.front().feature.size());
  for (std::size_t i = 0; i < data.size(); ++i) features.row(i) = data[i].feature.transpose();

  IterateResult result;
  result.labels = initial_labels;
  for (int round = 1; round <= cfg.rounds; ++round) {
    std::vector<double> trace;
    result.final_model = train_labeler(data, result.labels, cfg, rng, &trace,
                                       warm_start_first_layer, round);
    result.labels = assign_labels(result.final_model, features, cfg.eta);
    result.reports.push_back(make_report(round, result.labels, std::move(trace)));
  }
  return result;
}

// Line-delimited JSON, one object per round.
inline void save_reports(const std::vector<IterationReport>& reports, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write iteration reports: " + path);
  for (const auto& r : reports) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [cluster, count] : r.cluster_histogram)
      hist[std::to_string(cluster)] = count;
    nlohmann::json j{{"round", r.round},
                     {"n_foreground", r.n_foreground},
                     {"n_background", r.n_background},
                     {"non_empty_clusters", r.stats.non_empty},
                     {"clusters_covering_90", r.stats.covering_90},
                     {"clusters_covering_80", r.stats.covering_80},
                     {"cluster_histogram", hist},
                     {"loss_trace", r.loss_trace}};
    out << j.dump() << '\n';
  }
}

}  // namespace lidarseed

#endif  // LIDARSEED_LABELER_HPP
