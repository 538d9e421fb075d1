#pragma once

#include <array>

#include "vex/env.hpp"
#include "vex/expansion.hpp"
#include "vex/nn.hpp"

namespace vex {

/// Zero-error model: delegates to the environment's own step function,
/// on the tape when a differentiable prediction is requested. Rewards
/// come from the true reward function by construction.
class OracleModel final : public ModelIface {
 public:
  explicit OracleModel(const ContinuousEnv& env) : env_(env) {}

  void predict(const Mat& states, const Mat& actions, Rng& rng, Mat& next, Vec& reward,
               std::vector<uint8_t>& terminal) const override;
  bool differentiable() const override { return true; }
  DiffPrediction predict_diff(Tape& tape, Var states, Var actions, Rng& rng) const override;

 private:
  const ContinuousEnv& env_;
};

struct ModelTrainConfig {
  int max_epochs = 200;
  int patience = 5;
  double holdout_frac = 0.1;
  int batch_size = 256;
  double lr = 1e-3;
  long max_grad_steps = 0;  // 0 = no cap
};

struct ModelTrainReport {
  std::vector<double> train_nll;            // per member, final epoch
  std::vector<double> holdout_nll;          // per member, at the kept weights
  std::vector<double> initial_holdout_nll;  // per member, before training
  int epochs = 0;                           // max over members
  long gradient_steps = 0;
  bool variance_floored = false;
};

constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 4.0;

/// Probabilistic ensemble over state deltas. Each member maps the
/// normalized (s, a) pair to [mean, logvar] of the normalized delta;
/// logvar is soft-clamped to [kLogVarMin, kLogVarMax]. Prediction draws
/// a member uniformly per row. Rewards come from the environment's true
/// reward function, never from the network.
class EnsembleModel final : public ModelIface {
 public:
  static constexpr int kMembers = 5;

  EnsembleModel(const ContinuousEnv& env, int hidden_units, Rng& rng);

  void predict(const Mat& states, const Mat& actions, Rng& rng, Mat& next, Vec& reward,
               std::vector<uint8_t>& terminal) const override;
  bool differentiable() const override { return true; }
  DiffPrediction predict_diff(Tape& tape, Var states, Var actions, Rng& rng) const override;

  /// [mean | logvar] of the normalized delta, clamped, for one member.
  Mat member_head(int member, const Mat& states, const Mat& actions) const;

  ModelTrainReport train(const Mat& states, const Mat& actions, const Mat& next_states,
                         const ModelTrainConfig& cfg, Rng& rng);

  bool trained() const { return trained_; }
  std::array<ParameterSet, kMembers>& members() { return members_; }
  const std::array<ParameterSet, kMembers>& members() const { return members_; }
  const Vec& input_mean() const { return in_mean_; }
  const Vec& input_std() const { return in_std_; }
  const Vec& delta_mean() const { return delta_mean_; }
  const Vec& delta_std() const { return delta_std_; }
  void set_normalizers(Vec in_mean, Vec in_std, Vec delta_mean, Vec delta_std);

 private:
  const ContinuousEnv& env_;
  std::array<ParameterSet, kMembers> members_;
  Vec in_mean_, in_std_, delta_mean_, delta_std_;
  bool trained_ = false;
};

inline ModelTrainReport train_ensemble(EnsembleModel& model, const Mat& states, const Mat& actions,
                                       const Mat& next_states, const ModelTrainConfig& cfg,
                                       Rng& rng) {
  return model.train(states, actions, next_states, cfg, rng);
}

inline double soft_clamp(double x, double lo, double hi) {
  auto sp = [](double v) {
    return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  };
  return lo + sp((hi - sp(hi - x)) - lo);
}

Var soft_clamp(Tape& tape, Var x, double lo, double hi);

}  // namespace vex
