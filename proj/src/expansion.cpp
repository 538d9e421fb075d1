#include "vex/expansion.hpp"

#include <cmath>

#include "vex/env.hpp"

namespace vex {

DiffPrediction ModelIface::predict_diff(Tape&, Var, Var, Rng&) const {
  throw UnsupportedOperation("model is not differentiable");
}

Vec soft_value(const Mat& states, const CriticIface& critic, const PolicyIface& policy,
               double alpha, Rng& rng) {
  Mat actions;
  Vec log_probs;
  policy.sample(states, rng, actions, log_probs);
  Vec q = critic.q_min(states, actions);
  return q - alpha * log_probs;
}

double ParticleTargets::mean() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s / values.size();
}

double ParticleTargets::variance() const {
  double m = mean();
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return s / values.size();
}

double particle_average(const ParticleTargets& targets) { return targets.mean(); }

std::vector<ParticleTargets> q_h_target(const Mat& states, const Mat& actions,
                                        const ExpansionConfig& cfg, const CriticIface& critic,
                                        const PolicyIface& policy, const ModelIface& model,
                                        Rng& rng) {
  const int b = static_cast<int>(states.rows());
  const int h = cfg.horizon;
  std::vector<ParticleTargets> out(b);
  for (int i = 0; i < b; ++i) {
    out[i].anchor_state = states.row(i).transpose();
    out[i].anchor_action = actions.row(i).transpose();
    out[i].values.reserve(cfg.particles);
  }

  if (h == 0) {
    Vec q = critic.q_min(states, actions);
    for (int i = 0; i < b; ++i) out[i].values.assign(cfg.particles, q[i]);
    return out;
  }

  for (int p = 0; p < cfg.particles; ++p) {
    Vec y = Vec::Zero(b);
    Vec alive = Vec::Ones(b);
    Mat cur_states = states;
    Mat cur_actions = actions;
    Vec log_probs = Vec::Zero(b);
    double disc = 1.0;
    for (int t = 0; t < h; ++t) {
      Mat next;
      Vec reward;
      std::vector<uint8_t> terminal;
      model.predict(cur_states, cur_actions, rng, next, reward, terminal);
      if (!next.allFinite() || !reward.allFinite()) throw NonFiniteTarget(p);
      if (t == 0)
        y += reward;  // anchor reward carries no entropy term
      else
        y.array() += disc * alive.array() * (reward - cfg.alpha * log_probs).array();
      for (int i = 0; i < b; ++i)
        if (terminal[i]) alive[i] = 0.0;
      cur_states = std::move(next);
      disc *= cfg.gamma;
      if (t < h - 1) policy.sample(cur_states, rng, cur_actions, log_probs);
    }
    Vec v = soft_value(cur_states, critic, policy, cfg.alpha, rng);
    y.array() += disc * alive.array() * v.array();
    for (int i = 0; i < b; ++i) {
      if (!std::isfinite(y[i])) throw NonFiniteTarget(p);
      out[i].values.push_back(y[i]);
    }
  }
  return out;
}

Vec retrace_targets(std::span<const RolloutSegment> windows, const ExpansionConfig& cfg,
                    const CriticIface& critic, const PolicyIface& policy, Rng& rng) {
  const int n = static_cast<int>(windows.size());
  const int a_dim = n > 0 ? static_cast<int>(windows[0].actions.cols()) : 0;
  const int s_dim = n > 0 ? static_cast<int>(windows[0].states.cols()) : 0;

  std::vector<int> eff(n);
  int n_mid = 0, n_boot = 0;
  for (int w = 0; w < n; ++w) {
    if (windows[w].behavior_log_probs.size() != windows[w].length())
      throw std::invalid_argument("retrace: missing behavior log-probs");
    eff[w] = std::min(cfg.horizon, windows[w].length());
    n_mid += std::max(0, eff[w] - 1);
    if (eff[w] > 0) ++n_boot;
  }

  // H = 0 anchors regress to Q_min(s_0, a_0) directly.
  Mat anchor_s(n, s_dim), anchor_a(n, a_dim);
  for (int w = 0; w < n; ++w) {
    anchor_s.row(w) = windows[w].states.row(0);
    anchor_a.row(w) = windows[w].actions.row(0);
  }
  Vec q0 = critic.q_min(anchor_s, anchor_a);

  // Gather all interior (s_t, a_t), t in [1, H_w), for one batched pass.
  Mat mid_s(n_mid, s_dim), mid_a(n_mid, a_dim);
  int k = 0;
  for (int w = 0; w < n; ++w)
    for (int t = 1; t < eff[w]; ++t) {
      mid_s.row(k) = windows[w].states.row(t);
      mid_a.row(k) = windows[w].actions.row(t);
      ++k;
    }
  Vec mid_logpi(0), mid_q(0);
  if (n_mid > 0) {
    mid_logpi = policy.log_prob(mid_s, mid_a);
    mid_q = critic.q_min(mid_s, mid_a);
  }

  // Soft values: interior V(s_t) first, then the bootstrap V(s_H) per window.
  Mat v_states(n_mid + n_boot, s_dim);
  k = 0;
  for (int w = 0; w < n; ++w)
    for (int t = 1; t < eff[w]; ++t) v_states.row(k++) = windows[w].states.row(t);
  for (int w = 0; w < n; ++w)
    if (eff[w] > 0) v_states.row(k++) = windows[w].states.row(eff[w]);
  Vec v_all(0);
  if (v_states.rows() > 0) v_all = soft_value(v_states, critic, policy, cfg.alpha, rng);

  Vec out(n);
  int mid_at = 0, boot_at = n_mid;
  for (int w = 0; w < n; ++w) {
    const RolloutSegment& seg = windows[w];
    int h = eff[w];
    if (h == 0) {
      out[w] = q0[w];
      continue;
    }
    double y = seg.rewards[0];
    double c_prev = 1.0;  // c_0
    double disc = cfg.gamma;
    for (int t = 1; t < h; ++t) {
      double ratio = std::exp(mid_logpi[mid_at] - seg.behavior_log_probs[t]);
      double c_t = c_prev * cfg.lambda * std::min(1.0, ratio);
      y += disc * (c_t * seg.rewards[t] + c_prev * v_all[mid_at] - c_t * mid_q[mid_at]);
      c_prev = c_t;
      disc *= cfg.gamma;
      ++mid_at;
    }
    bool term = seg.terminal[h - 1] != 0;  // true terminal zeroes the bootstrap
    if (!term) y += disc * c_prev * v_all[boot_at];
    ++boot_at;
    out[w] = y;
  }
  return out;
}

double retrace_target(const RolloutSegment& window, const ExpansionConfig& cfg,
                      const CriticIface& critic, const PolicyIface& policy, Rng& rng) {
  return retrace_targets(std::span<const RolloutSegment>(&window, 1), cfg, critic, policy, rng)[0];
}

}  // namespace vex
