#pragma once

#include <map>
#include <string>
#include <vector>

#include "vex/expansion.hpp"
#include "vex/nn.hpp"
#include "vex/rng.hpp"
#include "vex/tensor.hpp"

namespace vex {

/// 1-Wasserstein distance between equal-size empirical measures given as
/// sorted samples: mean |p_(i) - q_(i)|.
double wasserstein_1d(const std::vector<double>& p_sorted, const std::vector<double>& q_sorted);

struct TargetStudyConfig {
  std::vector<int> horizons;
  int particles = 100;
  int mc_horizon = 300;
  double gamma = 0.99;
  double alpha = 0.0;
};

struct TargetStudyRow {
  long checkpoint_step = 0;  // filled by the caller
  int horizon = 0;
  double dw_mean = 0.0;      // averaged over anchors
  double target_mean = 0.0;  // mean of particle means
  double target_var = 0.0;   // mean of particle variances
  int n_anchors = 0;
};

/// Monte Carlo return particles: the Q^H integrand rolled out for
/// `mc_horizon` steps with a zero bootstrap. One vector of `particles`
/// values per anchor row.
std::vector<std::vector<double>> mc_return_particles(const Mat& states, const Mat& actions,
                                                     const TargetStudyConfig& cfg,
                                                     const PolicyIface& policy,
                                                     const ModelIface& model, Rng& rng);

/// Per-horizon comparison of Q^H target particles against the MC return
/// distribution at the same anchors (checkpoint_step left at 0).
std::vector<TargetStudyRow> target_distribution_study(const Mat& anchor_states,
                                                      const Mat& anchor_actions,
                                                      const TargetStudyConfig& cfg,
                                                      const CriticIface& critic,
                                                      const PolicyIface& policy,
                                                      const ModelIface& model, Rng& rng);

// --- checkpointing ---------------------------------------------------------

struct Checkpoint {
  std::string config_hash;
  long env_steps = 0;
  std::map<std::string, std::string> meta;  // rng states and the like
  std::map<std::string, Tensor> tensors;
};

struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws IntegrityError on malformed or truncated files; verifies the
/// config hash when `expected_hash` is non-empty.
Checkpoint load_checkpoint(const std::string& path, const std::string& expected_hash = "");

// Flattened naming helpers shared by save and restore.
void pack_params(Checkpoint& ckpt, const std::string& prefix, const ParameterSet& params);
void unpack_params(const Checkpoint& ckpt, const std::string& prefix, ParameterSet& params);
void pack_adam(Checkpoint& ckpt, const std::string& prefix, const AdamState& opt);
void unpack_adam(const Checkpoint& ckpt, const std::string& prefix, AdamState& opt);

}  // namespace vex
