#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vex/agent.hpp"
#include "vex/diagnostics.hpp"

namespace vex {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string env = "pendulum";
  std::string agent = "sac";         // sac | ddpg | dqn
  std::string expansion = "none";    // none | ce | ae | retrace
  std::string model = "oracle";      // oracle | learned
  int horizon = 0;
  int particles = 1;
  uint64_t seed = 0;
  long total_steps = 20000;
  long eval_interval = 500;
  int eval_episodes = 10;
  double gamma = -1.0;               // <0 means the environment default
  int hidden = 128;
  int model_hidden = 128;
  double lr_policy = 3e-4;
  double lr_critic = 3e-4;
  double lr_alpha = 3e-4;
  double tau = 0.005;
  double lambda = 1.0;
  int batch_size = 256;
  long min_replay = 512;
  long capacity = 200000;
  double init_log_alpha = 0.0;
  bool clip_gradients = false;
  double grad_clip_norm = 10.0;
  double ddpg_noise = 0.1;
  double eps_start = 1.0;
  double eps_end = 0.1;
  double eps_decay_frac = 0.2;
  int target_sync = 200;
  int n_checkpoints = 25;
  int checkpoint_anchors = 256;
  long model_retrain_interval = 1000;
  int model_max_epochs = 50;
  int model_patience = 5;
  double model_holdout = 0.1;
  double model_lr = 1e-3;
  long model_max_grad_steps = 500;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);  // throws ConfigError
  void validate() const;                                       // throws ConfigError
  std::string hash() const;
  double effective_gamma() const;
  AgentConfig agent_config() const;
};

/// Executes the collect/update loop, writing config.json, metrics.jsonl,
/// checkpoints/step_<N>.ckpt and status.json into `out_dir`.
void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

// --- aggregation -----------------------------------------------------------

struct SeriesSet {
  std::vector<long> steps;
  std::vector<std::vector<double>> values;  // one row per seed, aligned to steps
};

/// Reads eval returns from each run's metrics.jsonl; throws DataError on
/// mismatched evaluation grids.
SeriesSet load_returns(const std::vector<std::string>& run_dirs);

double iqm(std::vector<double> values);
/// Linear-interpolated percentile, p in [0, 100].
double percentile(std::vector<double> values, double p);

struct Normalization {
  double lo = 0.0;  // min over training of the baseline IQM
  double hi = 1.0;  // max over training of the baseline IQM
  double apply(double raw) const { return (raw - lo) / (hi - lo); }
};

Normalization baseline_normalization(const SeriesSet& baseline);

struct AggregateCurve {
  std::vector<long> steps;
  std::vector<double> iqm;     // normalized
  std::vector<double> ipr_lo;  // 5th percentile
  std::vector<double> ipr_hi;  // 95th
  std::vector<double> ci_lo;   // 95% percentile bootstrap
  std::vector<double> ci_hi;
  Normalization norm;
};

AggregateCurve aggregate(const SeriesSet& runs, const Normalization& norm,
                         int bootstrap_resamples = 2000, uint64_t bootstrap_seed = 0);

struct LearningSpeed {
  bool reached = false;
  long cross_step = -1;
  double percent = -1.0;  // of the baseline's steps-to-max; valid when reached
};

LearningSpeed learning_speed(const AggregateCurve& curve, const AggregateCurve& baseline);

struct FinalPerformance {
  double iqm = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  long step = 0;
};

FinalPerformance final_performance(const AggregateCurve& curve);

// --- plotting --------------------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band_lo;  // optional shaded band
  std::vector<double> band_hi;
};

/// Deterministic SVG line chart; `clip_hi` > 0 applies display-time
/// clipping to y values (stored data is never clipped).
void emit_plot(const std::string& path, const std::string& title,
               const std::vector<PlotSeries>& series, double clip_hi = 0.0);
void emit_curve_plot(const std::string& path, const std::string& title,
                     const std::map<std::string, AggregateCurve>& curves);

// --- target study ----------------------------------------------------------

/// Runs the target-distribution study over every checkpoint of a run
/// directory and writes JSONL rows to `out_file`.
void run_target_study(const std::string& run_dir, const std::vector<int>& horizons, int particles,
                      const std::string& out_file);

}  // namespace vex
