#include "co2po/nets.hpp"

#include <cmath>

namespace co2po {

Mlp::Mlp(std::vector<int> widths, Activation output_activation)
    : widths_(std::move(widths)), out_act_(output_activation) {
  require(widths_.size() >= 2, "Mlp: need at least input and output widths");
  for (int w : widths_) require(w >= 1, "Mlp: widths must be positive");
  int offset = 0;
  for (size_t l = 0; l + 1 < widths_.size(); ++l) {
    w_offset_.push_back(offset);
    offset += widths_[l + 1] * widths_[l];
    b_offset_.push_back(offset);
    offset += widths_[l + 1];
  }
  theta_ = VectorXd::Zero(offset);
  grad_ = VectorXd::Zero(offset);
}

Eigen::Map<const MatrixXd> Mlp::weight(int layer) const {
  return {theta_.data() + w_offset_[layer], widths_[layer + 1], widths_[layer]};
}

Eigen::Map<const VectorXd> Mlp::bias(int layer) const {
  return {theta_.data() + b_offset_[layer], widths_[layer + 1]};
}

Eigen::Map<MatrixXd> Mlp::weight_grad(int layer) {
  return {grad_.data() + w_offset_[layer], widths_[layer + 1], widths_[layer]};
}

Eigen::Map<VectorXd> Mlp::bias_grad(int layer) {
  return {grad_.data() + b_offset_[layer], widths_[layer + 1]};
}

void Mlp::init_xavier(RandomStream& rng, double output_gain) {
  const int layers = static_cast<int>(widths_.size()) - 1;
  for (int l = 0; l < layers; ++l) {
    const double limit = std::sqrt(6.0 / (widths_[l] + widths_[l + 1]));
    const double gain = (l == layers - 1) ? output_gain : 1.0;
    double* w = theta_.data() + w_offset_[l];
    const int count = widths_[l + 1] * widths_[l];
    for (int i = 0; i < count; ++i) w[i] = gain * rng.uniform(-limit, limit);
    // biases stay zero
  }
}

MatrixXd Mlp::forward(const MatrixXd& input, Cache* cache) const {
  require(input.rows() == widths_.front(), "Mlp::forward: input dimension mismatch");
  const int layers = static_cast<int>(widths_.size()) - 1;
  if (cache) {
    cache->act.clear();
    cache->act.reserve(layers + 1);
    cache->act.push_back(input);
  }
  MatrixXd a = input;
  for (int l = 0; l < layers; ++l) {
    MatrixXd z = (weight(l) * a).colwise() + bias(l);
    if (l < layers - 1 || out_act_ == Activation::Tanh) {
      a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
    if (cache) cache->act.push_back(a);
  }
  return a;
}

MatrixXd Mlp::backward(const MatrixXd& output_grad, const Cache& cache) {
  const int layers = static_cast<int>(widths_.size()) - 1;
  require(static_cast<int>(cache.act.size()) == layers + 1, "Mlp::backward: stale cache");
  MatrixXd delta = output_grad;
  for (int l = layers - 1; l >= 0; --l) {
    if (l < layers - 1 || out_act_ == Activation::Tanh) {
      delta = delta.cwiseProduct((1.0 - cache.act[l + 1].array().square()).matrix());
    }
    weight_grad(l).noalias() += delta * cache.act[l].transpose();
    bias_grad(l).noalias() += delta.rowwise().sum();
    if (l > 0) {
      delta = (weight(l).transpose() * delta).eval();
    } else {
      return weight(l).transpose() * delta;
    }
  }
  return {};
}

Optimizer::Optimizer(const OptimizerConfig& cfg, int param_count) : cfg_(cfg) {
  adam_ = cfg.method != "sgd";
  if (adam_) {
    m_ = VectorXd::Zero(param_count);
    v_ = VectorXd::Zero(param_count);
  }
}

void Optimizer::step(VectorXd& params, const VectorXd& grads) {
  if (!adam_) {
    params -= cfg_.lr * grads;
    return;
  }
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grads;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -=
      cfg_.lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + cfg_.eps);
}

double clip_grad_norm(VectorXd& grads, double max_norm) {
  const double norm = grads.norm();
  if (norm > max_norm && norm > 0.0) {
    grads *= max_norm / norm;
  }
  return norm;
}

}  // namespace co2po
