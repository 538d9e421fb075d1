#include "vex/agent.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vex {

namespace {

Mat normals(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

Mat concat_sa(const Mat& s, const Mat& a) {
  Mat x(s.rows(), s.cols() + a.cols());
  x << s, a;
  return x;
}

struct DeterministicPolicy final : PolicyIface {
  const ParameterSet* net;
  Vec bound;

  void sample(const Mat& states, Rng&, Mat& actions, Vec& log_probs) const override {
    Mat head = forward_mlp_eval(*net, states);
    actions = head.array().tanh().rowwise() * bound.transpose().array();
    log_probs = Vec::Zero(states.rows());
  }
  Vec log_prob(const Mat& states, const Mat&) const override { return Vec::Zero(states.rows()); }
};

// Greedy discrete policy; actions are indices in column 0.
struct GreedyPolicy final : PolicyIface {
  const ParameterSet* net;

  void sample(const Mat& states, Rng&, Mat& actions, Vec& log_probs) const override {
    Mat q = forward_mlp_eval(*net, states);
    actions.resize(states.rows(), 1);
    for (int i = 0; i < q.rows(); ++i) {
      int best = 0;
      q.row(i).maxCoeff(&best);
      actions(i, 0) = best;
    }
    log_probs = Vec::Zero(states.rows());
  }
  Vec log_prob(const Mat& states, const Mat& actions) const override {
    Mat q = forward_mlp_eval(*net, states);
    Vec lp(states.rows());
    for (int i = 0; i < q.rows(); ++i) {
      int best = 0;
      q.row(i).maxCoeff(&best);
      lp[i] = (static_cast<int>(actions(i, 0)) == best)
                  ? 0.0
                  : -std::numeric_limits<double>::infinity();
    }
    return lp;
  }
};

struct IndexedCritic final : CriticIface {
  const ParameterSet* net;

  Vec q_min(const Mat& states, const Mat& actions) const override {
    Mat q = forward_mlp_eval(*net, states);
    Vec out(states.rows());
    for (int i = 0; i < q.rows(); ++i) out[i] = q(i, static_cast<int>(actions(i, 0)));
    return out;
  }
};

std::vector<LayerSpec> mlp_layers(int in, int hidden, int out, int depth = 2) {
  std::vector<LayerSpec> layers;
  int prev = in;
  for (int l = 0; l < depth; ++l) {
    layers.push_back({prev, hidden, Activation::Relu});
    prev = hidden;
  }
  layers.push_back({prev, out, Activation::None});
  return layers;
}

GradStats merged_stats(std::initializer_list<const GradMap*> maps) {
  GradMap all;
  int k = 0;
  for (const GradMap* m : maps) {
    for (const auto& [name, t] : *m) all[std::to_string(k) + "/" + name] = t;
    ++k;
  }
  return gradient_stats(all);
}

void maybe_clip(GradMap& grads, const AgentConfig& cfg) {
  if (!cfg.clip_gradients) return;
  double n = grad_norm(grads);
  if (n <= cfg.grad_clip_norm || n == 0.0) return;
  double s = cfg.grad_clip_norm / n;
  for (auto& [name, t] : grads)
    for (double& v : t.data) v *= s;
}

constexpr double kExplodeNorm = 1e6;

}  // namespace

Batch make_batch(const ReplayBuffer& buffer, int size, int window, Rng& rng) {
  auto windows = buffer.sample_windows(size, std::max(1, window), rng);
  const Transition& probe = *windows[0][0];
  const int s_dim = static_cast<int>(probe.state.size());
  const int a_dim = static_cast<int>(probe.action.size());

  Batch b;
  b.states.resize(size, s_dim);
  b.actions.resize(size, a_dim);
  b.rewards.resize(size);
  b.next_states.resize(size, s_dim);
  b.terminal.resize(size);
  b.truncated.resize(size);
  b.behavior_log_probs.resize(size);
  b.anchors.resize(size);
  b.windows.reserve(size);

  for (int i = 0; i < size; ++i) {
    const auto& w = windows[i];
    const Transition& t = *w[0];
    b.states.row(i) = t.state.transpose();
    b.actions.row(i) = t.action.transpose();
    b.rewards[i] = t.reward;
    b.next_states.row(i) = t.next.transpose();
    b.terminal[i] = t.terminal ? 1 : 0;
    b.truncated[i] = t.truncated ? 1 : 0;
    b.behavior_log_probs[i] = t.behavior_log_prob;
    b.anchors[i] = &t;

    const int len = static_cast<int>(w.size());
    RolloutSegment seg;
    seg.states.resize(len + 1, s_dim);
    seg.actions.resize(len, a_dim);
    seg.rewards.resize(len);
    seg.behavior_log_probs.resize(len);
    seg.terminal.resize(len);
    seg.truncated.resize(len);
    for (int j = 0; j < len; ++j) {
      seg.states.row(j) = w[j]->state.transpose();
      seg.actions.row(j) = w[j]->action.transpose();
      seg.rewards[j] = w[j]->reward;
      seg.behavior_log_probs[j] = w[j]->behavior_log_prob;
      seg.terminal[j] = w[j]->terminal ? 1 : 0;
      seg.truncated[j] = w[j]->truncated ? 1 : 0;
    }
    seg.states.row(len) = w[len - 1]->next.transpose();
    b.windows.push_back(std::move(seg));
  }
  return b;
}

void SquashedPolicyView::sample(const Mat& states, Rng& rng, Mat& actions,
                                Vec& log_probs) const {
  Mat head = forward_mlp_eval(*net, states);
  Mat noise = normals(static_cast<int>(states.rows()), static_cast<int>(bound.size()), rng);
  auto s = sample_squashed_eval(head, noise, bound);
  actions = std::move(s.action);
  log_probs = std::move(s.log_prob);
}

Vec SquashedPolicyView::log_prob(const Mat& states, const Mat& actions) const {
  return squashed_log_prob(forward_mlp_eval(*net, states), actions, bound);
}

Vec MinCriticView::q_min(const Mat& states, const Mat& actions) const {
  Mat x = concat_sa(states, actions);
  Vec q1 = forward_mlp_eval(*a, x).col(0);
  if (!b) return q1;
  Vec q2 = forward_mlp_eval(*b, x).col(0);
  return q1.cwiseMin(q2);
}

// --- SAC -----------------------------------------------------------------

SacAgent::SacAgent(const ContinuousEnv& env, const AgentConfig& cfg, Rng& init_rng)
    : env_(env), cfg_(cfg) {
  const auto& sp = env.spec();
  policy_ = ParameterSet::mlp(mlp_layers(sp.state_dim, cfg.hidden, 2 * sp.action_dim), init_rng);
  q1_ = ParameterSet::mlp(mlp_layers(sp.state_dim + sp.action_dim, cfg.hidden, 1), init_rng);
  q2_ = ParameterSet::mlp(mlp_layers(sp.state_dim + sp.action_dim, cfg.hidden, 1), init_rng);
  tq1_ = q1_;
  tq2_ = q2_;
  alpha_param_.tensors["log_alpha"] = Tensor::scalar(cfg.init_log_alpha);
  opt_policy_ = AdamState::create(policy_, cfg.lr_policy);
  opt_q1_ = AdamState::create(q1_, cfg.lr_critic);
  opt_q2_ = AdamState::create(q2_, cfg.lr_critic);
  opt_alpha_ = AdamState::create(alpha_param_, cfg.lr_alpha);
  target_entropy_ = -static_cast<double>(sp.action_dim);
}

double SacAgent::alpha() const { return std::exp(alpha_param_.at("log_alpha").data[0]); }

Vec SacAgent::act(const Vec& state, bool explore, Rng& rng, double* log_prob) const {
  Mat head = forward_mlp_eval(policy_, state.transpose());
  const Vec& bound = env_.spec().action_bound;
  if (!explore) {
    if (log_prob) *log_prob = 0.0;
    return squashed_mean_action(head, bound).row(0).transpose();
  }
  Mat noise = normals(1, static_cast<int>(bound.size()), rng);
  auto s = sample_squashed_eval(head, noise, bound);
  if (log_prob) *log_prob = s.log_prob[0];
  return s.action.row(0).transpose();
}

Vec SacAgent::critic_target(const Batch& batch, Rng& rng, bool& non_finite) const {
  const int b = static_cast<int>(batch.states.rows());
  const double a = alpha();
  SquashedPolicyView pol;
  pol.net = &policy_;
  pol.bound = env_.spec().action_bound;
  MinCriticView tcrit;
  tcrit.a = &tq1_;
  tcrit.b = &tq2_;
  ExpansionConfig ec{cfg_.horizon, cfg_.lambda, cfg_.particles, cfg_.gamma, a, cfg_.mode};

  Vec y(b);
  non_finite = false;
  try {
    if (cfg_.mode == ExpansionMode::Retrace) {
      ec.horizon = cfg_.horizon + 1;  // windows anchor at the batch transition
      y = retrace_targets(batch.windows, ec, tcrit, pol, rng);
    } else if (cfg_.mode == ExpansionMode::Ce && cfg_.horizon > 0) {
      if (!model_) throw std::logic_error("critic expansion needs an attached model");
      Mat a2;
      Vec logp2;
      pol.sample(batch.next_states, rng, a2, logp2);
      auto parts = q_h_target(batch.next_states, a2, ec, tcrit, pol, *model_, rng);
      for (int i = 0; i < b; ++i) {
        double mask = batch.terminal[i] ? 0.0 : 1.0;
        y[i] = batch.rewards[i] + cfg_.gamma * mask * (parts[i].mean() - a * logp2[i]);
      }
    } else {
      Vec v = soft_value(batch.next_states, tcrit, pol, a, rng);
      for (int i = 0; i < b; ++i) {
        double mask = batch.terminal[i] ? 0.0 : 1.0;
        y[i] = batch.rewards[i] + cfg_.gamma * mask * v[i];
      }
    }
  } catch (const NonFiniteTarget&) {
    non_finite = true;
    return y;
  }
  non_finite = !y.allFinite();
  return y;
}

UpdateReport SacAgent::critic_update(const Batch& batch, Rng& rng) {
  UpdateReport rep;
  rep.alpha = alpha();
  bool bad = false;
  Vec y = critic_target(batch, rng, bad);
  if (bad) {
    rep.skipped = true;
    rep.non_finite_target = true;
    return rep;
  }

  Tape tape;
  auto p1 = TapedParams::push(tape, q1_);
  auto p2 = TapedParams::push(tape, q2_);
  Var in = tape.leaf(concat_sa(batch.states, batch.actions));
  Var yv = tape.leaf(Mat(y));
  Var loss = mean(square(forward_mlp(tape, p1, in) - yv)) +
             mean(square(forward_mlp(tape, p2, in) - yv));
  tape.backward(loss);
  GradMap g1 = p1.grads(tape);
  GradMap g2 = p2.grads(tape);
  rep.critic_loss = tape.val(loss).data[0];
  rep.grads = merged_stats({&g1, &g2});
  if (!rep.grads.finite) {
    rep.skipped = true;
    return rep;
  }
  maybe_clip(g1, cfg_);
  maybe_clip(g2, cfg_);
  adam_step(opt_q1_, q1_, g1);
  adam_step(opt_q2_, q2_, g2);
  polyak_update(tq1_, q1_, cfg_.tau);
  polyak_update(tq2_, q2_, cfg_.tau);
  return rep;
}

UpdateReport SacAgent::actor_update(const Batch& batch, Rng& rng) {
  UpdateReport rep;
  const double a = alpha();
  rep.alpha = a;
  const int b = static_cast<int>(batch.states.rows());
  const Vec& bound = env_.spec().action_bound;
  const int a_dim = static_cast<int>(bound.size());

  Tape tape;
  auto pp = TapedParams::push(tape, policy_);
  auto c1 = TapedParams::push(tape, q1_);
  auto c2 = TapedParams::push(tape, q2_);
  Var s0 = tape.leaf(batch.states);
  Var head0 = forward_mlp(tape, pp, s0);
  auto smp0 = sample_squashed_tape(tape, head0, normals(b, a_dim, rng), bound);

  auto q_min_tape = [&](Var s, Var act, const TapedParams& qa, const TapedParams& qb) {
    std::array<Var, 2> parts{s, act};
    Var x = concat_cols(std::span<const Var>(parts.data(), 2));
    return minimum(forward_mlp(tape, qa, x), forward_mlp(tape, qb, x));
  };

  Var qh{};
  if (cfg_.mode == ExpansionMode::Ae && cfg_.horizon > 0) {
    if (!model_ || !model_->differentiable())
      throw std::logic_error("actor expansion needs a differentiable model");
    // Bootstrap V uses target critic parameters; the gradient flows only
    // through its state and action inputs.
    auto t1 = TapedParams::push(tape, tq1_);
    auto t2 = TapedParams::push(tape, tq2_);
    Var acc{};
    for (int p = 0; p < cfg_.particles; ++p) {
      Var s = s0;
      Var act = smp0.action;
      Var lp{};
      double disc = 1.0;
      Var ret{};
      for (int t = 0; t < cfg_.horizon; ++t) {
        auto pred = model_->predict_diff(tape, s, act, rng);
        Var contrib = t == 0 ? pred.reward : scale(pred.reward - scale(lp, a), disc);
        ret = t == 0 ? contrib : ret + contrib;
        s = pred.next;
        disc *= cfg_.gamma;
        Var head = forward_mlp(tape, pp, s);
        auto smp = sample_squashed_tape(tape, head, normals(b, a_dim, rng), bound);
        act = smp.action;
        lp = smp.log_prob;
      }
      ret = ret + scale(q_min_tape(s, act, t1, t2) - scale(lp, a), disc);
      acc = p == 0 ? ret : acc + ret;
    }
    qh = scale(acc, 1.0 / cfg_.particles);
  } else {
    qh = q_min_tape(s0, smp0.action, c1, c2);
  }

  Var loss = mean(scale(smp0.log_prob, a) - qh);
  tape.backward(loss);
  GradMap g = pp.grads(tape);
  rep.actor_loss = tape.val(loss).data[0];
  rep.grads = gradient_stats(g);
  double n = grad_norm(g);
  if (!rep.grads.finite || n > kExplodeNorm) {
    rep.exploded = true;
    if (!cfg_.clip_gradients || !rep.grads.finite) {
      rep.skipped = true;
      return rep;
    }
  }
  maybe_clip(g, cfg_);
  adam_step(opt_policy_, policy_, g);
  return rep;
}

UpdateReport SacAgent::alpha_update(const Batch& batch, Rng& rng) {
  UpdateReport rep;
  const int b = static_cast<int>(batch.states.rows());
  const Vec& bound = env_.spec().action_bound;
  Mat head = forward_mlp_eval(policy_, batch.states);
  auto smp = sample_squashed_eval(head, normals(b, static_cast<int>(bound.size()), rng), bound);
  double g = -(smp.log_prob.array() + target_entropy_).mean();
  GradMap grads;
  grads["log_alpha"] = Tensor::scalar(g);
  adam_step(opt_alpha_, alpha_param_, grads);
  rep.alpha = alpha();
  rep.grads = gradient_stats(grads);
  return rep;
}

// --- DDPG ------------------------------------------------------------------

DdpgAgent::DdpgAgent(const ContinuousEnv& env, const AgentConfig& cfg, Rng& init_rng)
    : env_(env), cfg_(cfg) {
  const auto& sp = env.spec();
  policy_ = ParameterSet::mlp(mlp_layers(sp.state_dim, cfg.hidden, sp.action_dim), init_rng);
  q_ = ParameterSet::mlp(mlp_layers(sp.state_dim + sp.action_dim, cfg.hidden, 1), init_rng);
  tpolicy_ = policy_;
  tq_ = q_;
  opt_policy_ = AdamState::create(policy_, cfg.lr_policy);
  opt_q_ = AdamState::create(q_, cfg.lr_critic);
}

Vec DdpgAgent::act(const Vec& state, bool explore, Rng& rng) const {
  Mat head = forward_mlp_eval(policy_, state.transpose());
  const Vec& bound = env_.spec().action_bound;
  Vec a = head.row(0).transpose().array().tanh() * bound.array();
  if (explore) {
    for (int j = 0; j < a.size(); ++j) {
      a[j] += cfg_.ddpg_noise * bound[j] * rng.normal();
      a[j] = clamp(a[j], -bound[j], bound[j]);
    }
  }
  return a;
}

UpdateReport DdpgAgent::critic_update(const Batch& batch, Rng& rng) {
  UpdateReport rep;
  const int b = static_cast<int>(batch.states.rows());
  DeterministicPolicy tpol;
  tpol.net = &tpolicy_;
  tpol.bound = env_.spec().action_bound;
  MinCriticView tcrit;
  tcrit.a = &tq_;
  ExpansionConfig ec{cfg_.horizon, cfg_.lambda, cfg_.particles, cfg_.gamma, 0.0, cfg_.mode};

  Vec y(b);
  bool bad = false;
  try {
    if (cfg_.mode == ExpansionMode::Ce && cfg_.horizon > 0) {
      if (!model_) throw std::logic_error("critic expansion needs an attached model");
      Mat a2;
      Vec logp2;
      tpol.sample(batch.next_states, rng, a2, logp2);
      auto parts = q_h_target(batch.next_states, a2, ec, tcrit, tpol, *model_, rng);
      for (int i = 0; i < b; ++i) {
        double mask = batch.terminal[i] ? 0.0 : 1.0;
        y[i] = batch.rewards[i] + cfg_.gamma * mask * parts[i].mean();
      }
    } else if (cfg_.mode == ExpansionMode::Retrace) {
      throw UnsupportedOperation("retrace is undefined for a deterministic behavior policy");
    } else {
      Vec v = soft_value(batch.next_states, tcrit, tpol, 0.0, rng);
      for (int i = 0; i < b; ++i) {
        double mask = batch.terminal[i] ? 0.0 : 1.0;
        y[i] = batch.rewards[i] + cfg_.gamma * mask * v[i];
      }
    }
  } catch (const NonFiniteTarget&) {
    bad = true;
  }
  if (bad || !y.allFinite()) {
    rep.skipped = true;
    rep.non_finite_target = true;
    return rep;
  }

  Tape tape;
  auto pq = TapedParams::push(tape, q_);
  Var in = tape.leaf(concat_sa(batch.states, batch.actions));
  Var loss = mean(square(forward_mlp(tape, pq, in) - tape.leaf(Mat(y))));
  tape.backward(loss);
  GradMap g = pq.grads(tape);
  rep.critic_loss = tape.val(loss).data[0];
  rep.grads = gradient_stats(g);
  if (!rep.grads.finite) {
    rep.skipped = true;
    return rep;
  }
  maybe_clip(g, cfg_);
  adam_step(opt_q_, q_, g);
  polyak_update(tq_, q_, cfg_.tau);
  polyak_update(tpolicy_, policy_, cfg_.tau);
  return rep;
}

UpdateReport DdpgAgent::actor_update(const Batch& batch, Rng& rng) {
  UpdateReport rep;
  const int b = static_cast<int>(batch.states.rows());
  const Vec& bound = env_.spec().action_bound;

  Tape tape;
  auto pp = TapedParams::push(tape, policy_);
  auto pq = TapedParams::push(tape, q_);
  Var bound_mat = tape.leaf(Mat(bound.transpose().replicate(b, 1)));
  auto policy_action = [&](Var s) { return tanh(forward_mlp(tape, pp, s)) * bound_mat; };
  auto q_tape = [&](Var s, Var act, const TapedParams& qp) {
    std::array<Var, 2> parts{s, act};
    return forward_mlp(tape, qp, concat_cols(std::span<const Var>(parts.data(), 2)));
  };

  Var s0 = tape.leaf(batch.states);
  Var act = policy_action(s0);
  Var qh{};
  if (cfg_.mode == ExpansionMode::Ae && cfg_.horizon > 0) {
    if (!model_ || !model_->differentiable())
      throw std::logic_error("actor expansion needs a differentiable model");
    Var s = s0;
    Var ret{};
    double disc = 1.0;
    for (int t = 0; t < cfg_.horizon; ++t) {
      auto pred = model_->predict_diff(tape, s, act, rng);
      Var contrib = t == 0 ? pred.reward : scale(pred.reward, disc);
      ret = t == 0 ? contrib : ret + contrib;
      s = pred.next;
      disc *= cfg_.gamma;
      act = policy_action(s);
    }
    auto tq = TapedParams::push(tape, tq_);
    qh = ret + scale(q_tape(s, act, tq), disc);
  } else {
    qh = q_tape(s0, act, pq);
  }

  Var loss = neg(mean(qh));
  tape.backward(loss);
  GradMap g = pp.grads(tape);
  rep.actor_loss = tape.val(loss).data[0];
  rep.grads = gradient_stats(g);
  double n = grad_norm(g);
  if (!rep.grads.finite || n > kExplodeNorm) {
    rep.exploded = true;
    if (!cfg_.clip_gradients || !rep.grads.finite) {
      rep.skipped = true;
      return rep;
    }
  }
  maybe_clip(g, cfg_);
  adam_step(opt_policy_, policy_, g);
  return rep;
}

// --- DQN -------------------------------------------------------------------

DqnAgent::DqnAgent(const MiniBreakout& env, const AgentConfig& cfg, Rng& init_rng)
    : env_(env), cfg_(cfg) {
  q_ = ParameterSet::mlp(mlp_layers(env.spec().state_dim, cfg.hidden, env.spec().num_actions),
                         init_rng);
  tq_ = q_;
  opt_ = AdamState::create(q_, cfg.lr_critic);
}

double DqnAgent::epsilon(double progress) const {
  if (progress >= cfg_.eps_decay_frac) return cfg_.eps_end;
  double f = progress / cfg_.eps_decay_frac;
  return cfg_.eps_start + f * (cfg_.eps_end - cfg_.eps_start);
}

int DqnAgent::act(const Vec& obs, bool explore, double progress, Rng& rng) const {
  if (explore && rng.uniform() < epsilon(progress))
    return rng.uniform_int(env_.spec().num_actions);
  Mat q = forward_mlp_eval(q_, obs.transpose());
  int best = 0;
  q.row(0).maxCoeff(&best);
  return best;
}

Vec DqnAgent::targets(const Batch& batch, Rng& rng) const {
  const int b = static_cast<int>(batch.states.rows());
  Vec y(b);

  if (cfg_.mode == ExpansionMode::Retrace) {
    GreedyPolicy pol;
    pol.net = &q_;
    IndexedCritic tcrit;
    tcrit.net = &tq_;
    ExpansionConfig ec{cfg_.horizon + 1, cfg_.lambda, 1, cfg_.gamma, 0.0, cfg_.mode};
    return retrace_targets(batch.windows, ec, tcrit, pol, rng);
  }

  if (cfg_.mode == ExpansionMode::Ce && cfg_.horizon > 0) {
    // Deterministic oracle rollout on the full game state, greedy actions
    // from the online network, bootstrap from the target network.
    for (int i = 0; i < b; ++i) {
      if (!batch.anchors[i] || !batch.anchors[i]->game)
        throw std::logic_error("discrete expansion needs stored game states");
      BreakoutState cur = *batch.anchors[i]->game;
      int action = static_cast<int>(batch.actions(i, 0));
      double acc = 0.0, disc = 1.0;
      bool dead = false;
      for (int t = 0; t < cfg_.horizon; ++t) {
        auto step = env_.step(cur, action);
        acc += disc * step.reward;
        disc *= cfg_.gamma;
        if (step.terminal) {
          dead = true;
          break;
        }
        cur = step.next;
        Mat q = forward_mlp_eval(q_, cur.observation().transpose());
        q.row(0).maxCoeff(&action);
      }
      if (!dead) {
        Mat q = forward_mlp_eval(tq_, cur.observation().transpose());
        acc += disc * q.row(0).maxCoeff();
      }
      y[i] = acc;
    }
    return y;
  }

  Mat q = forward_mlp_eval(tq_, batch.next_states);
  for (int i = 0; i < b; ++i) {
    double mask = batch.terminal[i] ? 0.0 : 1.0;
    y[i] = batch.rewards[i] + cfg_.gamma * mask * q.row(i).maxCoeff();
  }
  return y;
}

UpdateReport DqnAgent::update(const Batch& batch, Rng& rng) {
  UpdateReport rep;
  Vec y = targets(batch, rng);
  if (!y.allFinite()) {
    rep.skipped = true;
    rep.non_finite_target = true;
    return rep;
  }

  std::vector<int> idx(batch.states.rows());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(batch.actions(i, 0));

  Tape tape;
  auto pq = TapedParams::push(tape, q_);
  Var qa = gather_cols(forward_mlp(tape, pq, tape.leaf(batch.states)), idx);
  Var loss = mean(square(qa - tape.leaf(Mat(y))));
  tape.backward(loss);
  GradMap g = pq.grads(tape);
  rep.critic_loss = tape.val(loss).data[0];
  rep.grads = gradient_stats(g);
  if (!rep.grads.finite) {
    rep.skipped = true;
    return rep;
  }
  maybe_clip(g, cfg_);
  adam_step(opt_, q_, g);
  if (++updates_ % cfg_.target_sync == 0) tq_ = q_;
  return rep;
}

}  // namespace vex
