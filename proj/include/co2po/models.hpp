#pragma once

#include <optional>
#include <string>
#include <vector>

#include "co2po/blackboard.hpp"
#include "co2po/env.hpp"
#include "co2po/nets.hpp"

namespace co2po {

// Message/hazard head F_theta shared across agents. The raw output has
// 2*d_msg + 2 rows per sample: hazard logit, state summary x, intent u,
// yield pre-sigmoid.
class MessageHead {
 public:
  MessageHead() = default;
  MessageHead(int obs_dim, int hidden, int hidden_layers, int d_msg);

  int d_msg() const { return d_msg_; }
  int raw_rows() const { return 2 * d_msg_ + 2; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  MatrixXd forward_raw(const MatrixXd& obs, Mlp::Cache* cache = nullptr) const {
    return net_.forward(obs, cache);
  }
  void backward_raw(const MatrixXd& raw_grad, const Mlp::Cache& cache) {
    net_.backward(raw_grad, cache);
  }

  // raw row layout
  static double logit_of(const MatrixXd& raw, int col) { return raw(0, col); }
  VectorXd summary_of(const MatrixXd& raw, int col) const {
    return raw.block(1, col, d_msg_, 1);
  }
  VectorXd intent_of(const MatrixXd& raw, int col) const {
    return raw.block(1 + d_msg_, col, d_msg_, 1);
  }
  double yield_pre_of(const MatrixXd& raw, int col) const { return raw(1 + 2 * d_msg_, col); }

  // psi = [x; u; sigma(yield_pre); sigma(logit)], the read-side slot layout
  VectorXd psi_of(const MatrixXd& raw, int col) const;
  // maps a gradient in psi layout back onto the raw rows
  VectorXd raw_grad_from_psi_grad(const VectorXd& psi_grad, const MatrixXd& raw, int col) const;

  BlackboardEntry entry_of(const MatrixXd& raw, int col, int write_bit) const;

 private:
  int d_msg_ = 0;
  Mlp net_;
};

struct MessageHeadOutput {
  double hazard_logit = 0.0;
  double hazard_prob = 0.5;
  VectorXd intent;
  double yield_flag = 0.5;
  VectorXd state_summary;
};

// Single-observation forward; rejects non-finite input.
MessageHeadOutput message_head_forward(const MessageHead& head, const VectorXd& obs);

struct PolicyOutput {
  ActionSpace::Kind kind = ActionSpace::Kind::Continuous;
  VectorXd mean;     // continuous
  VectorXd log_std;  // continuous, already clamped
  VectorXd logits;   // discrete
};

// Diagonal Gaussian with state-independent log-std.
namespace gaussian {
MatrixXd sample(const MatrixXd& mean, const VectorXd& log_std, RandomStream& rng);
VectorXd log_prob(const MatrixXd& mean, const VectorXd& log_std, const MatrixXd& actions);
double entropy(const VectorXd& log_std);
// dL/dmean for per-sample log-prob weights
MatrixXd mean_grad(const MatrixXd& mean, const VectorXd& log_std, const MatrixXd& actions,
                   const VectorXd& logp_weight);
// dL/dlog_std from per-sample log-prob weights plus an entropy weight
VectorXd log_std_grad(const MatrixXd& mean, const VectorXd& log_std, const MatrixXd& actions,
                      const VectorXd& logp_weight, double entropy_weight);
}  // namespace gaussian

namespace categorical {
MatrixXd log_softmax(const MatrixXd& logits);
std::vector<int> sample(const MatrixXd& logits, RandomStream& rng);
std::vector<int> argmax(const MatrixXd& logits);
VectorXd log_prob(const MatrixXd& logits, const std::vector<int>& actions);
VectorXd entropy(const MatrixXd& logits);
// dL/dlogits from per-sample log-prob and entropy weights
MatrixXd logits_grad(const MatrixXd& logits, const std::vector<int>& actions,
                     const VectorXd& logp_weight, const VectorXd& entropy_weight);
}  // namespace categorical

// Decentralized actor: context encoder feeding a policy trunk over
// [observation; embedding]. Parameters flatten as encoder, policy, log-std.
class Actor {
 public:
  Actor() = default;
  Actor(const ActionSpace& space, int obs_dim, int ctx_len, int embed_dim, int hidden,
        int hidden_layers, double log_std_init, double log_std_min, double log_std_max);

  const ActionSpace& space() const { return space_; }
  int embed_dim() const { return enc_.out_dim(); }

  struct Cache {
    Mlp::Cache enc, pol;
  };

  // Returns the policy head (mean for continuous, logits for discrete).
  MatrixXd forward(const MatrixXd& obs, const MatrixXd& ctx, Cache* cache = nullptr) const;
  // Backward through policy trunk and encoder; returns dL/dcontext.
  MatrixXd backward(const MatrixXd& head_grad, const Cache& cache);

  VectorXd log_std_clamped() const;
  // gradient w.r.t. the raw log-std parameter (zero where clamped)
  void accumulate_log_std_grad(const VectorXd& clamped_grad);

  void init(RandomStream& rng);

  int param_count() const;
  VectorXd gather_params() const;
  void scatter_params(const VectorXd& flat);
  VectorXd gather_grads() const;
  void zero_grads();

  Mlp& encoder() { return enc_; }
  Mlp& policy_net() { return pol_; }
  const Mlp& encoder() const { return enc_; }
  const Mlp& policy_net() const { return pol_; }

 private:
  ActionSpace space_;
  Mlp enc_, pol_;
  VectorXd log_std_raw_, log_std_grad_;
  double log_std_min_ = -5.0, log_std_max_ = 1.0;
};

struct AgentAction {
  VectorXd cont;
  int disc = 0;
};

// Single-sample policy ops.
PolicyOutput policy_forward(const Actor& actor, const VectorXd& obs, const VectorXd& ctx);
AgentAction sample_action(const PolicyOutput& out, RandomStream& rng);
double policy_log_prob(const PolicyOutput& out, const AgentAction& action);
double policy_entropy(const PolicyOutput& out);

// Centralized value head; the final layer starts at zero so an untouched
// critic evaluates to exactly zero everywhere.
class Critic {
 public:
  Critic() = default;
  Critic(int input_dim, int hidden, int hidden_layers);

  VectorXd forward(const MatrixXd& centralized, Mlp::Cache* cache = nullptr) const;
  void backward(const VectorXd& value_grad, const Mlp::Cache& cache);
  double value(const VectorXd& centralized) const;

  void init(RandomStream& rng);
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
};

// All learnable parameters of one run.
struct ModelSet {
  MessageHead message_head;
  std::vector<Actor> actors;
  Critic critic_r, critic_c;

  std::string to_checkpoint_json() const;
  void load_checkpoint_json(const std::string& text);
};

}  // namespace co2po
