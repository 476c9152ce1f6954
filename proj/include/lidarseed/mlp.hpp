#ifndef LIDARSEED_MLP_HPP
#define LIDARSEED_MLP_HPP

#include <Eigen/Dense>

#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidarseed {

// Dense multi-layer perceptron with ReLU hidden activations and a linear
// output layer. Minibatch rows are samples.
class Mlp {
 public:
  struct Gradients {
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;
  };

  Mlp() = default;

  Mlp(const std::vector<int>& layer_dims, std::mt19937_64& rng) : dims_(layer_dims) {
    if (layer_dims.size() < 2) throw std::invalid_argument("mlp: need >= 2 layer dims");
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
      const int fan_in = layer_dims[l];
      const int fan_out = layer_dims[l + 1];
      // He initialization for the ReLU stack.
      std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / fan_in));
      Eigen::MatrixXd w(fan_out, fan_in);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = gauss(rng);
      weights_.push_back(std::move(w));
      biases_.push_back(Eigen::VectorXd::Zero(fan_out));
    }
  }

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

  // Forward pass; caches per-layer activations for backward().
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) {
    activations_.clear();
    activations_.push_back(x);
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = (h * weights_[l].transpose()).rowwise() + biases_[l].transpose();
      if (l + 1 < weights_.size()) h = h.cwiseMax(0.0);
      activations_.push_back(h);
    }
    return h;
  }

  // Inference without caching.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = (h * weights_[l].transpose()).rowwise() + biases_[l].transpose();
      if (l + 1 < weights_.size()) h = h.cwiseMax(0.0);
    }
    return h;
  }

  // Backprop from d(loss)/d(output); returns parameter gradients and fills
  // d(loss)/d(input) if requested.
  Gradients backward(const Eigen::MatrixXd& grad_output,
                     Eigen::MatrixXd* grad_input = nullptr) const {
    if (activations_.size() != weights_.size() + 1)
      throw std::logic_error("mlp: backward without forward");
    Gradients g;
    g.dw.resize(weights_.size());
    g.db.resize(weights_.size());
    Eigen::MatrixXd delta = grad_output;
    for (int l = static_cast<int>(weights_.size()) - 1; l >= 0; --l) {
      if (l + 1 < static_cast<int>(weights_.size())) {
        // Through the ReLU of layer l's output.
        delta = delta.cwiseProduct(
            (activations_[l + 1].array() > 0.0).cast<double>().matrix());
      }
      g.dw[l] = delta.transpose() * activations_[l];
      g.db[l] = delta.colwise().sum().transpose();
      if (l > 0 || grad_input) delta = delta * weights_[l];
    }
    if (grad_input) *grad_input = delta;
    return g;
  }

  void save(std::ostream& out) const {
    out.precision(17);
    out << dims_.size();
    for (int d : dims_) out << ' ' << d;
    out << '\n';
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      for (Eigen::Index i = 0; i < weights_[l].size(); ++i)
        out << weights_[l].data()[i] << ' ';
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) out << biases_[l][i] << ' ';
      out << '\n';
    }
  }

  static Mlp load(std::istream& in) {
    std::size_t n = 0;
    in >> n;
    Mlp m;
    m.dims_.resize(n);
    for (auto& d : m.dims_) in >> d;
    for (std::size_t l = 0; l + 1 < n; ++l) {
      Eigen::MatrixXd w(m.dims_[l + 1], m.dims_[l]);
      for (Eigen::Index i = 0; i < w.size(); ++i) in >> w.data()[i];
      Eigen::VectorXd b(m.dims_[l + 1]);
      for (Eigen::Index i = 0; i < b.size(); ++i) in >> b[i];
      m.weights_.push_back(std::move(w));
      m.biases_.push_back(std::move(b));
    }
    if (!in) throw std::runtime_error("mlp: malformed model stream");
    return m;
  }

 private:
  std::vector<int> dims_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  mutable std::vector<Eigen::MatrixXd> activations_;
};

// SGD with classic momentum and decoupled-from-nothing L2 weight decay.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(Mlp& model, const Mlp::Gradients& grads) {
    if (vw_.empty()) {
      for (const auto& w : model.weights()) vw_.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
      for (const auto& b : model.biases()) vb_.push_back(Eigen::VectorXd::Zero(b.size()));
    }
    for (std::size_t l = 0; l < model.weights().size(); ++l) {
      vw_[l] = momentum_ * vw_[l] + grads.dw[l] + weight_decay_ * model.weights()[l];
      vb_[l] = momentum_ * vb_[l] + grads.db[l];
      model.weights()[l] -= lr_ * vw_[l];
      model.biases()[l] -= lr_ * vb_[l];
    }
  }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<Eigen::MatrixXd> vw_;
  std::vector<Eigen::VectorXd> vb_;
};

}  // namespace lidarseed

#endif  // LIDARSEED_MLP_HPP
