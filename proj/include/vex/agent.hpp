#pragma once

#include <optional>
#include <string>

#include "vex/expansion.hpp"
#include "vex/model.hpp"
#include "vex/nn.hpp"
#include "vex/replay.hpp"

namespace vex {

struct AgentConfig {
  std::string algo = "sac";  // sac | ddpg | dqn
  ExpansionMode mode = ExpansionMode::None;
  int horizon = 0;
  int particles = 1;
  double lr_policy = 3e-4;
  double lr_critic = 3e-4;
  double lr_alpha = 3e-4;
  double tau = 0.005;
  double gamma = 0.99;
  double lambda = 1.0;
  int batch_size = 256;
  int hidden = 256;
  double init_log_alpha = 0.0;
  bool clip_gradients = false;   // AE safety valve, off by default
  double grad_clip_norm = 10.0;
  double ddpg_noise = 0.1;       // fraction of the action bound
  double eps_start = 1.0;        // DQN
  double eps_end = 0.1;
  double eps_decay_frac = 0.2;   // fraction of total frames
  int target_sync = 200;         // DQN hard-sync period, in updates
  size_t min_replay = 512;
  size_t capacity = 200000;
};

struct UpdateReport {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  GradStats grads;
  bool skipped = false;
  bool non_finite_target = false;
  bool exploded = false;
};

/// Column-major view of a sampled batch. `windows` is populated only for
/// retrace-style updates.
struct Batch {
  Mat states;
  Mat actions;
  Vec rewards;
  Mat next_states;
  std::vector<uint8_t> terminal;
  std::vector<uint8_t> truncated;
  Vec behavior_log_probs;
  std::vector<RolloutSegment> windows;
  std::vector<const Transition*> anchors;  // row-aligned source transitions
};

Batch make_batch(const ReplayBuffer& buffer, int size, int window, Rng& rng);

// Non-owning adapters exposing networks through the estimator plugs.

struct SquashedPolicyView final : PolicyIface {
  const ParameterSet* net = nullptr;
  Vec bound;

  void sample(const Mat& states, Rng& rng, Mat& actions, Vec& log_probs) const override;
  Vec log_prob(const Mat& states, const Mat& actions) const override;
};

struct MinCriticView final : CriticIface {
  const ParameterSet* a = nullptr;
  const ParameterSet* b = nullptr;  // null for single-critic agents

  Vec q_min(const Mat& states, const Mat& actions) const override;
};

class SacAgent {
 public:
  SacAgent(const ContinuousEnv& env, const AgentConfig& cfg, Rng& init_rng);

  void attach_model(const ModelIface* model) { model_ = model; }

  Vec act(const Vec& state, bool explore, Rng& rng, double* log_prob = nullptr) const;

  UpdateReport critic_update(const Batch& batch, Rng& rng);
  UpdateReport actor_update(const Batch& batch, Rng& rng);
  UpdateReport alpha_update(const Batch& batch, Rng& rng);

  double alpha() const;
  const AgentConfig& config() const { return cfg_; }

  ParameterSet& policy() { return policy_; }
  ParameterSet& critic(int i) { return i == 0 ? q1_ : q2_; }
  ParameterSet& target_critic(int i) { return i == 0 ? tq1_ : tq2_; }
  Tensor& log_alpha() { return alpha_param_.tensors.at("log_alpha"); }

 private:
  Vec critic_target(const Batch& batch, Rng& rng, bool& non_finite) const;

  const ContinuousEnv& env_;
  AgentConfig cfg_;
  const ModelIface* model_ = nullptr;
  ParameterSet policy_, q1_, q2_, tq1_, tq2_;
  ParameterSet alpha_param_;
  AdamState opt_policy_, opt_q1_, opt_q2_, opt_alpha_;
  double target_entropy_;
};

class DdpgAgent {
 public:
  DdpgAgent(const ContinuousEnv& env, const AgentConfig& cfg, Rng& init_rng);

  void attach_model(const ModelIface* model) { model_ = model; }

  Vec act(const Vec& state, bool explore, Rng& rng) const;

  UpdateReport critic_update(const Batch& batch, Rng& rng);
  UpdateReport actor_update(const Batch& batch, Rng& rng);

  ParameterSet& policy() { return policy_; }
  ParameterSet& target_policy() { return tpolicy_; }
  ParameterSet& critic() { return q_; }
  ParameterSet& target_critic() { return tq_; }
  const AgentConfig& config() const { return cfg_; }

 private:
  const ContinuousEnv& env_;
  AgentConfig cfg_;
  const ModelIface* model_ = nullptr;
  ParameterSet policy_, tpolicy_, q_, tq_;
  AdamState opt_policy_, opt_q_;
};

class DqnAgent {
 public:
  DqnAgent(const MiniBreakout& env, const AgentConfig& cfg, Rng& init_rng);

  /// epsilon-greedy; `progress` in [0,1] drives the linear decay.
  int act(const Vec& obs, bool explore, double progress, Rng& rng) const;
  double epsilon(double progress) const;

  UpdateReport update(const Batch& batch, Rng& rng);

  ParameterSet& network() { return q_; }
  ParameterSet& target_network() { return tq_; }
  const AgentConfig& config() const { return cfg_; }
  long updates_done() const { return updates_; }

 private:
  Vec targets(const Batch& batch, Rng& rng) const;

  const MiniBreakout& env_;
  AgentConfig cfg_;
  ParameterSet q_, tq_;
  AdamState opt_;
  long updates_ = 0;
};

}  // namespace vex
