#include "co2po/models.hpp"

#include <cmath>

#include "json.hpp"

namespace co2po {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

std::vector<int> hidden_widths(int in, int hidden, int layers, int out) {
  std::vector<int> widths;
  widths.push_back(in);
  for (int l = 0; l < layers; ++l) widths.push_back(hidden);
  widths.push_back(out);
  return widths;
}
}  // namespace

// --- MessageHead ---

MessageHead::MessageHead(int obs_dim, int hidden, int hidden_layers, int d_msg)
    : d_msg_(d_msg), net_(hidden_widths(obs_dim, hidden, hidden_layers, 2 * d_msg + 2)) {}

VectorXd MessageHead::psi_of(const MatrixXd& raw, int col) const {
  VectorXd psi(2 * d_msg_ + 2);
  psi.head(d_msg_) = summary_of(raw, col);
  psi.segment(d_msg_, d_msg_) = intent_of(raw, col);
  psi(2 * d_msg_) = sigmoid(yield_pre_of(raw, col));
  psi(2 * d_msg_ + 1) = sigmoid(logit_of(raw, col));
  return psi;
}

VectorXd MessageHead::raw_grad_from_psi_grad(const VectorXd& psi_grad, const MatrixXd& raw,
                                             int col) const {
  VectorXd g = VectorXd::Zero(raw_rows());
  g.segment(1, d_msg_) = psi_grad.head(d_msg_);
  g.segment(1 + d_msg_, d_msg_) = psi_grad.segment(d_msg_, d_msg_);
  const double y = sigmoid(yield_pre_of(raw, col));
  const double p = sigmoid(logit_of(raw, col));
  g(1 + 2 * d_msg_) = psi_grad(2 * d_msg_) * y * (1.0 - y);
  g(0) = psi_grad(2 * d_msg_ + 1) * p * (1.0 - p);
  return g;
}

BlackboardEntry MessageHead::entry_of(const MatrixXd& raw, int col, int write_bit) const {
  BlackboardEntry entry;
  entry.state_summary = summary_of(raw, col);
  entry.intent = intent_of(raw, col);
  entry.yield_flag = sigmoid(yield_pre_of(raw, col));
  entry.hazard_prob = sigmoid(logit_of(raw, col));
  entry.write_bit = write_bit;
  return entry;
}

MessageHeadOutput message_head_forward(const MessageHead& head, const VectorXd& obs) {
  require(obs.allFinite(), "message_head_forward: non-finite observation");
  require(obs.size() == head.net().in_dim(), "message_head_forward: observation length mismatch");
  const MatrixXd raw = head.forward_raw(obs);
  MessageHeadOutput out;
  out.hazard_logit = MessageHead::logit_of(raw, 0);
  out.hazard_prob = sigmoid(out.hazard_logit);
  out.state_summary = head.summary_of(raw, 0);
  out.intent = head.intent_of(raw, 0);
  out.yield_flag = sigmoid(head.yield_pre_of(raw, 0));
  return out;
}

// --- gaussian ---

namespace gaussian {

MatrixXd sample(const MatrixXd& mean, const VectorXd& log_std, RandomStream& rng) {
  MatrixXd actions(mean.rows(), mean.cols());
  for (int c = 0; c < mean.cols(); ++c) {
    for (int r = 0; r < mean.rows(); ++r) {
      actions(r, c) = mean(r, c) + std::exp(log_std(r)) * rng.gaussian();
    }
  }
  return actions;
}

VectorXd log_prob(const MatrixXd& mean, const VectorXd& log_std, const MatrixXd& actions) {
  const VectorXd inv_var = (-2.0 * log_std).array().exp();
  VectorXd logp = VectorXd::Constant(mean.cols(),
                                     -log_std.sum() - 0.5 * kLog2Pi * mean.rows());
  for (int c = 0; c < mean.cols(); ++c) {
    const VectorXd d = actions.col(c) - mean.col(c);
    logp(c) -= 0.5 * d.cwiseProduct(d).dot(inv_var);
  }
  return logp;
}

double entropy(const VectorXd& log_std) {
  return log_std.sum() + 0.5 * log_std.size() * (kLog2Pi + 1.0);
}

MatrixXd mean_grad(const MatrixXd& mean, const VectorXd& log_std, const MatrixXd& actions,
                   const VectorXd& logp_weight) {
  const VectorXd inv_var = (-2.0 * log_std).array().exp();
  MatrixXd g = (actions - mean).array().colwise() * inv_var.array();
  for (int c = 0; c < g.cols(); ++c) g.col(c) *= logp_weight(c);
  return g;
}

VectorXd log_std_grad(const MatrixXd& mean, const VectorXd& log_std, const MatrixXd& actions,
                      const VectorXd& logp_weight, double entropy_weight) {
  const VectorXd inv_var = (-2.0 * log_std).array().exp();
  VectorXd g = VectorXd::Constant(log_std.size(), entropy_weight);
  for (int c = 0; c < mean.cols(); ++c) {
    const VectorXd d = actions.col(c) - mean.col(c);
    g += logp_weight(c) * (d.cwiseProduct(d).cwiseProduct(inv_var) -
                           VectorXd::Ones(log_std.size()));
  }
  return g;
}

}  // namespace gaussian

// --- categorical ---

namespace categorical {

MatrixXd log_softmax(const MatrixXd& logits) {
  MatrixXd out(logits.rows(), logits.cols());
  for (int c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    const double lse = m + std::log((logits.col(c).array() - m).exp().sum());
    out.col(c) = logits.col(c).array() - lse;
  }
  return out;
}

std::vector<int> sample(const MatrixXd& logits, RandomStream& rng) {
  const MatrixXd logp = log_softmax(logits);
  std::vector<int> actions(logits.cols());
  for (int c = 0; c < logits.cols(); ++c) {
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = static_cast<int>(logits.rows()) - 1;
    for (int r = 0; r < logits.rows(); ++r) {
      acc += std::exp(logp(r, c));
      if (u < acc) {
        pick = r;
        break;
      }
    }
    actions[c] = pick;
  }
  return actions;
}

std::vector<int> argmax(const MatrixXd& logits) {
  std::vector<int> actions(logits.cols());
  for (int c = 0; c < logits.cols(); ++c) {
    int best = 0;
    for (int r = 1; r < logits.rows(); ++r) {
      if (logits(r, c) > logits(best, c)) best = r;
    }
    actions[c] = best;
  }
  return actions;
}

VectorXd log_prob(const MatrixXd& logits, const std::vector<int>& actions) {
  const MatrixXd logp = log_softmax(logits);
  VectorXd out(logits.cols());
  for (int c = 0; c < logits.cols(); ++c) out(c) = logp(actions[c], c);
  return out;
}

VectorXd entropy(const MatrixXd& logits) {
  const MatrixXd logp = log_softmax(logits);
  VectorXd out(logits.cols());
  for (int c = 0; c < logits.cols(); ++c) {
    out(c) = -(logp.col(c).array().exp() * logp.col(c).array()).sum();
  }
  return out;
}

MatrixXd logits_grad(const MatrixXd& logits, const std::vector<int>& actions,
                     const VectorXd& logp_weight, const VectorXd& entropy_weight) {
  const MatrixXd logp = log_softmax(logits);
  MatrixXd g = MatrixXd::Zero(logits.rows(), logits.cols());
  for (int c = 0; c < logits.cols(); ++c) {
    const VectorXd p = logp.col(c).array().exp();
    // d logp(a)/dz = onehot(a) - p
    g.col(c) = -logp_weight(c) * p;
    g(actions[c], c) += logp_weight(c);
    if (entropy_weight(c) != 0.0) {
      const double h = -(p.array() * logp.col(c).array()).sum();
      g.col(c) += entropy_weight(c) * (-p.array() * (logp.col(c).array() + h)).matrix();
    }
  }
  return g;
}

}  // namespace categorical

// --- Actor ---

Actor::Actor(const ActionSpace& space, int obs_dim, int ctx_len, int embed_dim, int hidden,
             int hidden_layers, double log_std_init, double log_std_min, double log_std_max)
    : space_(space),
      enc_(hidden_widths(ctx_len, hidden, hidden_layers - 1, embed_dim)),
      pol_(hidden_widths(obs_dim + embed_dim, hidden, hidden_layers,
                         space.kind == ActionSpace::Kind::Continuous ? space.act_dim
                                                                     : space.n_actions)),
      log_std_min_(log_std_min),
      log_std_max_(log_std_max) {
  if (space_.kind == ActionSpace::Kind::Continuous) {
    log_std_raw_ = VectorXd::Constant(space.act_dim, log_std_init);
    log_std_grad_ = VectorXd::Zero(space.act_dim);
  }
}

MatrixXd Actor::forward(const MatrixXd& obs, const MatrixXd& ctx, Cache* cache) const {
  const MatrixXd emb = enc_.forward(ctx, cache ? &cache->enc : nullptr);
  MatrixXd pol_in(obs.rows() + emb.rows(), obs.cols());
  pol_in.topRows(obs.rows()) = obs;
  pol_in.bottomRows(emb.rows()) = emb;
  return pol_.forward(pol_in, cache ? &cache->pol : nullptr);
}

MatrixXd Actor::backward(const MatrixXd& head_grad, const Cache& cache) {
  const MatrixXd dpol_in = pol_.backward(head_grad, cache.pol);
  const MatrixXd demb = dpol_in.bottomRows(enc_.out_dim());
  return enc_.backward(demb, cache.enc);
}

VectorXd Actor::log_std_clamped() const {
  return log_std_raw_.cwiseMax(log_std_min_).cwiseMin(log_std_max_);
}

void Actor::accumulate_log_std_grad(const VectorXd& clamped_grad) {
  for (int i = 0; i < log_std_raw_.size(); ++i) {
    if (log_std_raw_(i) > log_std_min_ && log_std_raw_(i) < log_std_max_) {
      log_std_grad_(i) += clamped_grad(i);
    }
  }
}

void Actor::init(RandomStream& rng) {
  enc_.init_xavier(rng);
  // zero final layer: the initial deterministic policy is the null action
  pol_.init_xavier(rng, 0.0);
}

int Actor::param_count() const {
  return enc_.param_count() + pol_.param_count() + static_cast<int>(log_std_raw_.size());
}

VectorXd Actor::gather_params() const {
  VectorXd flat(param_count());
  flat.head(enc_.param_count()) = enc_.params();
  flat.segment(enc_.param_count(), pol_.param_count()) = pol_.params();
  if (log_std_raw_.size() > 0) flat.tail(log_std_raw_.size()) = log_std_raw_;
  return flat;
}

void Actor::scatter_params(const VectorXd& flat) {
  require(flat.size() == param_count(), "Actor::scatter_params: size mismatch");
  enc_.params() = flat.head(enc_.param_count());
  pol_.params() = flat.segment(enc_.param_count(), pol_.param_count());
  if (log_std_raw_.size() > 0) log_std_raw_ = flat.tail(log_std_raw_.size());
}

VectorXd Actor::gather_grads() const {
  VectorXd flat(param_count());
  flat.head(enc_.param_count()) = enc_.grads();
  flat.segment(enc_.param_count(), pol_.param_count()) = pol_.grads();
  if (log_std_raw_.size() > 0) flat.tail(log_std_grad_.size()) = log_std_grad_;
  return flat;
}

void Actor::zero_grads() {
  enc_.zero_grads();
  pol_.zero_grads();
  log_std_grad_.setZero();
}

PolicyOutput policy_forward(const Actor& actor, const VectorXd& obs, const VectorXd& ctx) {
  require(actor.encoder().params().allFinite() && actor.policy_net().params().allFinite(),
          "policy_forward: non-finite parameters");
  require(obs.allFinite() && ctx.allFinite(), "policy_forward: non-finite input");
  require(ctx.size() == actor.encoder().in_dim(), "policy_forward: context length mismatch");
  const MatrixXd head = actor.forward(obs, ctx);
  PolicyOutput out;
  out.kind = actor.space().kind;
  if (out.kind == ActionSpace::Kind::Continuous) {
    out.mean = head.col(0);
    out.log_std = actor.log_std_clamped();
  } else {
    out.logits = head.col(0);
  }
  return out;
}

AgentAction sample_action(const PolicyOutput& out, RandomStream& rng) {
  AgentAction action;
  if (out.kind == ActionSpace::Kind::Continuous) {
    action.cont = gaussian::sample(out.mean, out.log_std, rng).col(0);
  } else {
    action.disc = categorical::sample(out.logits, rng)[0];
  }
  return action;
}

double policy_log_prob(const PolicyOutput& out, const AgentAction& action) {
  if (out.kind == ActionSpace::Kind::Continuous) {
    return gaussian::log_prob(out.mean, out.log_std, action.cont)(0);
  }
  return categorical::log_prob(out.logits, {action.disc})(0);
}

double policy_entropy(const PolicyOutput& out) {
  if (out.kind == ActionSpace::Kind::Continuous) {
    return gaussian::entropy(out.log_std);
  }
  return categorical::entropy(out.logits)(0);
}

// --- Critic ---

Critic::Critic(int input_dim, int hidden, int hidden_layers)
    : net_(hidden_widths(input_dim, hidden, hidden_layers, 1)) {}

VectorXd Critic::forward(const MatrixXd& centralized, Mlp::Cache* cache) const {
  return net_.forward(centralized, cache).row(0).transpose();
}

void Critic::backward(const VectorXd& value_grad, const Mlp::Cache& cache) {
  net_.backward(value_grad.transpose(), cache);
}

double Critic::value(const VectorXd& centralized) const {
  require(centralized.size() == net_.in_dim(), "Critic::value: input dimension mismatch");
  return forward(centralized)(0);
}

void Critic::init(RandomStream& rng) { net_.init_xavier(rng, 0.0); }

// --- checkpoint ---

namespace {

nlohmann::ordered_json net_json(const Mlp& net) {
  nlohmann::ordered_json j;
  j["widths"] = net.widths();
  j["params"] = std::vector<double>(net.params().data(), net.params().data() + net.param_count());
  return j;
}

void load_net(Mlp& net, const nlohmann::json& j) {
  const auto widths = j.at("widths").get<std::vector<int>>();
  require(widths == net.widths(), "checkpoint: architecture mismatch");
  const auto values = j.at("params").get<std::vector<double>>();
  require(static_cast<int>(values.size()) == net.param_count(), "checkpoint: parameter count mismatch");
  for (int i = 0; i < net.param_count(); ++i) net.params()(i) = values[i];
}

}  // namespace

std::string ModelSet::to_checkpoint_json() const {
  nlohmann::ordered_json j;
  j["format"] = "co2po-checkpoint-v1";
  j["param_layout"] = "per layer: weight matrix column-major, then bias";
  j["message_head"] = net_json(message_head.net());
  j["message_head"]["d_msg"] = message_head.d_msg();
  j["actors"] = nlohmann::ordered_json::array();
  for (const Actor& actor : actors) {
    nlohmann::ordered_json a;
    a["encoder"] = net_json(actor.encoder());
    a["policy"] = net_json(actor.policy_net());
    const VectorXd flat = actor.gather_params();
    const int ls = flat.size() - actor.encoder().param_count() - actor.policy_net().param_count();
    a["log_std"] = std::vector<double>(flat.data() + flat.size() - ls, flat.data() + flat.size());
    j["actors"].push_back(a);
  }
  j["critic_r"] = net_json(critic_r.net());
  j["critic_c"] = net_json(critic_c.net());
  return j.dump(2);
}

void ModelSet::load_checkpoint_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  require(j.at("format") == "co2po-checkpoint-v1", "checkpoint: unknown format");
  load_net(message_head.net(), j.at("message_head"));
  require(j.at("actors").size() == actors.size(), "checkpoint: actor count mismatch");
  for (size_t i = 0; i < actors.size(); ++i) {
    const auto& a = j.at("actors").at(i);
    load_net(actors[i].encoder(), a.at("encoder"));
    load_net(actors[i].policy_net(), a.at("policy"));
    const auto ls = a.at("log_std").get<std::vector<double>>();
    VectorXd flat = actors[i].gather_params();
    require(static_cast<int>(ls.size()) ==
                flat.size() - actors[i].encoder().param_count() - actors[i].policy_net().param_count(),
            "checkpoint: log_std size mismatch");
    for (size_t k = 0; k < ls.size(); ++k) flat(flat.size() - ls.size() + k) = ls[k];
    actors[i].scatter_params(flat);
  }
  load_net(critic_r.net(), j.at("critic_r"));
  load_net(critic_c.net(), j.at("critic_c"));
}

}  // namespace co2po
