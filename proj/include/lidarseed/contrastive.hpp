#ifndef LIDARSEED_CONTRASTIVE_HPP
#define LIDARSEED_CONTRASTIVE_HPP

#include <Eigen/Dense>

#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "lidarseed/features.hpp"
#include "lidarseed/mlp.hpp"

namespace lidarseed {

struct ContrastiveConfig {
  std::vector<int> layer_dims{kFeatureDim, 128, 64};
  double temperature = 0.2;
  int batch_size = 256;
  int epochs = 10;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct ContrastiveEncoder {
  Mlp net;
  double temperature = 0.2;

  Eigen::VectorXd encode(const Eigen::VectorXd& feature) const {
    return net.predict(feature.transpose()).row(0).transpose();
  }
};

struct InfoNceResult {
  double loss = 0.0;
  Eigen::MatrixXd grad_a;  // wrt raw (pre-normalization) embeddings
  Eigen::MatrixXd grad_b;
};

namespace detail {

inline Eigen::MatrixXd row_normalize(const Eigen::MatrixXd& x, Eigen::VectorXd& norms) {
  norms = x.rowwise().norm().cwiseMax(1e-12);
  return x.array().colwise() / norms.array();
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Eigen::MatrixXd e = shifted.array().exp();
  return e.array().colwise() / e.rowwise().sum().array();
}

}  // namespace detail

// Symmetric InfoNCE over two views. Rows of a/b are paired raw embeddings;
// in-batch entries of the other view are the negatives.
inline InfoNceResult info_nce(const Eigen::MatrixXd& a_raw, const Eigen::MatrixXd& b_raw,
                              double temperature) {
  if (a_raw.rows() != b_raw.rows() || a_raw.cols() != b_raw.cols())
    throw std::invalid_argument("info_nce: view shapes differ");
  if (temperature <= 0.0) throw std::invalid_argument("info_nce: temperature must be > 0");
  const Eigen::Index n = a_raw.rows();

  Eigen::VectorXd na, nb;
  const Eigen::MatrixXd a = detail::row_normalize(a_raw, na);
  const Eigen::MatrixXd b = detail::row_normalize(b_raw, nb);
  const Eigen::MatrixXd logits = a * b.transpose() / temperature;

  const Eigen::MatrixXd p_row = detail::softmax_rows(logits);
  const Eigen::MatrixXd p_col = detail::softmax_rows(logits.transpose()).transpose();

  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    loss -= std::log(std::max(p_row(i, i), 1e-300)) + std::log(std::max(p_col(i, i), 1e-300));
  loss /= 2.0 * n;

  Eigen::MatrixXd d_logits = (p_row + p_col) / (2.0 * n);
  d_logits.diagonal().array() -= 1.0 / n;

  // Through the similarity and the row normalization.
  Eigen::MatrixXd da = d_logits * b / temperature;
  Eigen::MatrixXd db = d_logits.transpose() * a / temperature;
  InfoNceResult res;
  res.loss = loss;
  res.grad_a.resizeLike(a_raw);
  res.grad_b.resizeLike(b_raw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd ua = a.row(i), ub = b.row(i);
    res.grad_a.row(i) = (da.row(i) - da.row(i).dot(ua) * ua.transpose()) / na[i];
    res.grad_b.row(i) = (db.row(i) - db.row(i).dot(ub) * ub.transpose()) / nb[i];
  }
  return res;
}

// Loss and parameter gradients for one batch of paired views pushed through a
// shared encoder.
inline double contrastive_batch(ContrastiveEncoder& enc, const Eigen::MatrixXd& x1,
                                const Eigen::MatrixXd& x2, Mlp::Gradients* grads) {
  // forward() caches only the last call, so backward runs once per view.
  const Eigen::MatrixXd e1 = enc.net.forward(x1);
  const Eigen::MatrixXd e2 = enc.net.predict(x2);
  Mlp::Gradients g1, g2;
  InfoNceResult nce = info_nce(e1, e2, enc.temperature);
  g1 = enc.net.backward(nce.grad_a);
  enc.net.forward(x2);
  g2 = enc.net.backward(nce.grad_b);
  if (grads) {
    grads->dw = g1.dw;
    grads->db = g1.db;
    for (std::size_t l = 0; l < g1.dw.size(); ++l) {
      grads->dw[l] += g2.dw[l];
      grads->db[l] += g2.db[l];
    }
  }
  return nce.loss;
}

struct ContrastiveItem {
  std::vector<Point3> points;
  Eigen::VectorXd appearance;  // fixed across views; zero vector when absent
};

inline Eigen::VectorXd contrastive_view(const ContrastiveItem& item, std::mt19937_64& rng) {
  const auto params = random_augment_params(rng);
  const auto aug = augment_segment(item.points, params, rng);
  Eigen::VectorXd v(kFeatureDim);
  v.head(kShapeDim) = shape_descriptor(aug);
  v.tail(kAppearanceDim) =
      item.appearance.size() == kAppearanceDim ? item.appearance
                                               : Eigen::VectorXd::Zero(kAppearanceDim);
  return v;
}

struct ContrastiveTrainResult {
  ContrastiveEncoder encoder;
  std::vector<double> epoch_loss;
};

inline ContrastiveTrainResult contrastive_pretrain(const std::vector<ContrastiveItem>& items,
                                                   const ContrastiveConfig& cfg,
                                                   std::mt19937_64& rng) {
  if (static_cast<int>(items.size()) < 2 * cfg.batch_size)
    throw std::invalid_argument("contrastive_pretrain: need >= 2 * batch_size segments");
  ContrastiveTrainResult result;
  result.encoder.net = Mlp(cfg.layer_dims, rng);
  result.encoder.temperature = cfg.temperature;
  SgdOptimizer opt(cfg.lr, cfg.momentum, cfg.weight_decay);

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + cfg.batch_size <= order.size();
         start += cfg.batch_size) {
      Eigen::MatrixXd x1(cfg.batch_size, cfg.layer_dims.front());
      Eigen::MatrixXd x2(cfg.batch_size, cfg.layer_dims.front());
      for (int i = 0; i < cfg.batch_size; ++i) {
        const auto& item = items[order[start + i]];
        x1.row(i) = contrastive_view(item, rng).transpose();
        x2.row(i) = contrastive_view(item, rng).transpose();
      }
      Mlp::Gradients grads;
      epoch_loss += contrastive_batch(result.encoder, x1, x2, &grads);
      opt.step(result.encoder.net, grads);
      ++batches;
    }
    result.epoch_loss.push_back(batches > 0 ? epoch_loss / batches : 0.0);
  }
  return result;
}

}  // namespace lidarseed

#endif  // LIDARSEED_CONTRASTIVE_HPP
