#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "vex/rng.hpp"
#include "vex/tape.hpp"
#include "vex/tensor.hpp"

namespace vex {

struct EnvSpec {
  std::string id;
  int state_dim = 0;
  int action_dim = 0;
  Vec action_bound;      // per-dimension |a| bound
  double dt = 0.0;
  int action_repeat = 1;
  int episode_len = 0;
  double gamma = 0.99;
  bool discrete = false;
  int num_actions = 0;   // discrete only
};

struct StepResult {
  Vec next;
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;
};

struct UnsupportedOperation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Continuous-control task with analytically differentiable dynamics.
/// One agent step applies the (clipped) action for `action_repeat`
/// integration sub-steps; the reward is the mean over sub-steps. The
/// (cos, sin) pair is renormalized after every sub-step. Continuous
/// tasks never terminate; episodes end by truncation only.
class ContinuousEnv {
 public:
  virtual ~ContinuousEnv() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Vec reset(Rng& rng) const = 0;

  /// elapsed = agent steps taken before this one; sets `truncated` when
  /// the episode limit is reached.
  virtual StepResult step(const Vec& state, const Vec& action, int elapsed = 0) const = 0;

  struct DiffStep {
    Var next;    // B x state_dim
    Var reward;  // B x 1
  };
  /// Same numerics as step(), on the tape, batched over rows.
  virtual DiffStep step_diff(Tape& tape, Var state, Var action) const = 0;

  virtual double true_reward(const Vec& state, const Vec& action) const = 0;

  virtual void step_batch(const Mat& states, const Mat& actions, Mat& next, Vec& reward) const = 0;
};

std::unique_ptr<ContinuousEnv> make_continuous_env(const std::string& id);

// --- MinAtar-style breakout --------------------------------------------

/// 10x10 grid, three brick rows, deterministic reflections; randomness
/// only at reset. Terminal when the ball exits the bottom row or all
/// bricks are cleared.
struct BreakoutState {
  std::array<uint8_t, 100> bricks{};  // row-major occupancy
  int paddle_col = 4;
  int ball_row = 4, ball_col = 4;
  int prev_row = 3, prev_col = 3;  // trail
  int vy = 1, vx = 1;              // components in {-1, +1}
  int elapsed = 0;

  int brick_count() const;
  Vec observation() const;  // 4 channels x 100, flattened
};

struct BreakoutStep {
  BreakoutState next;
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;
};

class MiniBreakout {
 public:
  static constexpr int kGrid = 10;
  static constexpr int kNumActions = 3;  // left, stay, right

  const EnvSpec& spec() const { return spec_; }
  BreakoutState reset(Rng& rng) const;
  BreakoutStep step(const BreakoutState& state, int action) const;

 private:
  EnvSpec spec_{.id = "mini_breakout",
                .state_dim = 400,
                .action_dim = 1,
                .action_bound = Vec(),
                .dt = 1.0,
                .action_repeat = 1,
                .episode_len = 500,
                .gamma = 0.99,
                .discrete = true,
                .num_actions = kNumActions};
};

}  // namespace vex
