#pragma once

#include <map>
#include <string>
#include <vector>

#include "vex/rng.hpp"
#include "vex/tape.hpp"
#include "vex/tensor.hpp"

namespace vex {

enum class Activation { None, Relu, Tanh };

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::None;
};

/// Named parameter collection for one network. Weight i is "W<i>" with
/// shape (in x out), bias i is "b<i>" with shape (1 x out).
struct ParameterSet {
  std::vector<LayerSpec> layers;
  std::map<std::string, Tensor> tensors;

  static ParameterSet mlp(const std::vector<LayerSpec>& layers, Rng& rng);

  Tensor& operator[](const std::string& name) { return tensors.at(name); }
  const Tensor& at(const std::string& name) const { return tensors.at(name); }
};

using GradMap = std::map<std::string, Tensor>;

/// Parameters pushed onto a tape as leaves, keeping the name -> Var map
/// so gradients can be read back per parameter.
struct TapedParams {
  const ParameterSet* source = nullptr;
  std::map<std::string, Var> vars;

  static TapedParams push(Tape& tape, const ParameterSet& params);
  GradMap grads(const Tape& tape) const;
};

Var forward_mlp(Tape& tape, const TapedParams& params, Var input);
Mat forward_mlp_eval(const ParameterSet& params, const Mat& input);

// --- squashed-Gaussian policy head -------------------------------------
//
// The policy network outputs [mean, log_std] as 2A columns. log_std is
// clamped to [-20, 2]; actions are bound * tanh(mean + std * noise) and
// log-probs carry the tanh change-of-variables correction.

constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 2.0;

struct SquashedSample {
  Var action;    // B x A
  Var log_prob;  // B x 1
};

/// Reparametrized sample on the tape; noise is a fixed standard-normal
/// draw so gradients flow to mean and log-std.
SquashedSample sample_squashed_tape(Tape& tape, Var head_out, const Mat& noise, const Vec& bound);

struct SquashedSampleEval {
  Mat action;
  Vec log_prob;
};

SquashedSampleEval sample_squashed_eval(const Mat& head_out, const Mat& noise, const Vec& bound);
Mat squashed_mean_action(const Mat& head_out, const Vec& bound);
/// log pi(a|s) for given (possibly replayed) actions, inverting the tanh.
Vec squashed_log_prob(const Mat& head_out, const Mat& actions, const Vec& bound);

// --- optimization -------------------------------------------------------

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  static AdamState create(const ParameterSet& params, double lr);
};

struct AdamReport {
  bool skipped = false;  // set when a gradient was non-finite
};

AdamReport adam_step(AdamState& state, ParameterSet& params, const GradMap& grads);
void polyak_update(ParameterSet& target, const ParameterSet& online, double tau);

struct GradStats {
  double mean = 0.0;
  double std = 0.0;
  bool finite = true;
};

/// Mean/std over every scalar dimension of all gradients in the map.
GradStats gradient_stats(const GradMap& grads);
double grad_norm(const GradMap& grads);

}  // namespace vex
