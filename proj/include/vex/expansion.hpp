#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vex/rng.hpp"
#include "vex/tape.hpp"
#include "vex/tensor.hpp"

namespace vex {

enum class ExpansionMode { None, Ce, Ae, Retrace };

struct ExpansionConfig {
  int horizon = 0;       // H = 0 recovers the base algorithm target
  double lambda = 1.0;
  int particles = 1;
  double gamma = 0.99;
  double alpha = 0.0;    // live entropy weight at target-computation time
  ExpansionMode mode = ExpansionMode::None;
};

// Batched plugs so the estimators work for networks and for tabular
// test doubles alike. Rows are batch elements.

struct PolicyIface {
  virtual ~PolicyIface() = default;
  virtual void sample(const Mat& states, Rng& rng, Mat& actions, Vec& log_probs) const = 0;
  virtual Vec log_prob(const Mat& states, const Mat& actions) const = 0;
};

struct CriticIface {
  virtual ~CriticIface() = default;
  virtual Vec q_min(const Mat& states, const Mat& actions) const = 0;
};

struct DiffPrediction {
  Var next;
  Var reward;
};

struct ModelIface {
  virtual ~ModelIface() = default;
  virtual void predict(const Mat& states, const Mat& actions, Rng& rng, Mat& next, Vec& reward,
                       std::vector<uint8_t>& terminal) const = 0;
  virtual bool differentiable() const = 0;
  virtual DiffPrediction predict_diff(Tape& tape, Var states, Var actions, Rng& rng) const;
};

/// Single-sample soft state value V = Q_min(s, a') - alpha * log pi(a'|s)
/// with a' ~ pi. One value per row.
Vec soft_value(const Mat& states, const CriticIface& critic, const PolicyIface& policy,
               double alpha, Rng& rng);

struct ParticleTargets {
  Vec anchor_state;
  Vec anchor_action;
  std::vector<double> values;

  double mean() const;
  double variance() const;  // population variance over particles
};

struct NonFiniteTarget : std::runtime_error {
  int particle = -1;
  explicit NonFiniteTarget(int p)
      : std::runtime_error("non-finite expansion target at particle " + std::to_string(p)),
        particle(p) {}
};

/// H-step value expansion target anchored at (s, a), one ParticleTargets
/// per row. Rollouts stop accumulating at model terminals; truncation
/// still bootstraps. H = 0 returns Q_min(s, a) exactly.
std::vector<ParticleTargets> q_h_target(const Mat& states, const Mat& actions,
                                        const ExpansionConfig& cfg, const CriticIface& critic,
                                        const PolicyIface& policy, const ModelIface& model,
                                        Rng& rng);

/// One replayed window: states s_0..s_H, actions a_0..a_{H-1} (a_0 always
/// present, even for H = 0), rewards and behavior log-probs per
/// transition, terminal/truncated flags per transition.
struct RolloutSegment {
  Mat states;
  Mat actions;
  Vec rewards;
  Vec behavior_log_probs;
  std::vector<uint8_t> terminal;
  std::vector<uint8_t> truncated;

  int length() const { return static_cast<int>(rewards.size()); }  // H
};

double retrace_target(const RolloutSegment& window, const ExpansionConfig& cfg,
                      const CriticIface& critic, const PolicyIface& policy, Rng& rng);

/// Batched form used by the critic update; evaluates networks in one
/// pass across windows. Windows may have different effective horizons.
Vec retrace_targets(std::span<const RolloutSegment> windows, const ExpansionConfig& cfg,
                    const CriticIface& critic, const PolicyIface& policy, Rng& rng);

double particle_average(const ParticleTargets& targets);

}  // namespace vex
