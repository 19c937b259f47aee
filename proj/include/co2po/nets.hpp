#pragma once

#include <string>
#include <vector>

#include "co2po/common.hpp"

namespace co2po {

enum class Activation { Identity, Tanh };

// Fully connected net, tanh hidden layers, configurable output activation.
// Inputs and outputs are column-per-sample matrices. Parameters live in one
// flat vector; the layout is, per layer in order, the weight matrix in
// column-major order followed by the bias vector.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> widths, Activation output_activation = Activation::Identity);

  int param_count() const { return static_cast<int>(theta_.size()); }
  VectorXd& params() { return theta_; }
  const VectorXd& params() const { return theta_; }
  VectorXd& grads() { return grad_; }
  const VectorXd& grads() const { return grad_; }
  void zero_grads() { grad_.setZero(); }

  const std::vector<int>& widths() const { return widths_; }
  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }

  // Xavier-uniform weights, zero biases; final layer scaled by output_gain.
  void init_xavier(RandomStream& rng, double output_gain = 1.0);

  struct Cache {
    std::vector<MatrixXd> act;  // act[0] = input, act[l] = layer l output
  };

  // input: in_dim x batch. Pass a cache to enable backward.
  MatrixXd forward(const MatrixXd& input, Cache* cache = nullptr) const;

  // Accumulates parameter gradients and returns the input gradient.
  MatrixXd backward(const MatrixXd& output_grad, const Cache& cache);

 private:
  Eigen::Map<const MatrixXd> weight(int layer) const;
  Eigen::Map<const VectorXd> bias(int layer) const;
  Eigen::Map<MatrixXd> weight_grad(int layer);
  Eigen::Map<VectorXd> bias_grad(int layer);

  std::vector<int> widths_;
  Activation out_act_ = Activation::Identity;
  std::vector<int> w_offset_, b_offset_;
  VectorXd theta_, grad_;
};

struct OptimizerConfig {
  std::string method = "adam";  // "adam" | "sgd"
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First-order optimizer over a flat parameter vector.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const OptimizerConfig& cfg, int param_count);

  void step(VectorXd& params, const VectorXd& grads);

 private:
  OptimizerConfig cfg_;
  bool adam_ = true;
  long long t_ = 0;
  VectorXd m_, v_;
};

// Scales grads in place so the global norm is at most max_norm; returns the
// pre-clip norm.
double clip_grad_norm(VectorXd& grads, double max_norm);

}  // namespace co2po
