#include "vex/env.hpp"

#include <cmath>

namespace vex {

namespace {

// --- pendulum -----------------------------------------------------------
// theta = 0 is upright; state [cos(th), sin(th), thdot].

constexpr double kPendG = 10.0;
constexpr double kPendM = 1.0;
constexpr double kPendL = 1.0;
constexpr double kPendDt = 0.05;
constexpr double kPendMaxTorque = 2.0;
constexpr double kPendMaxSpeed = 8.0;

template <class T>
void rotate_renorm(T& c, T& s, const T& dth) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  T cd = cos(dth);
  T sd = sin(dth);
  T c2 = c * cd - s * sd;
  T s2 = s * cd + c * sd;
  T n = sqrt(c2 * c2 + s2 * s2);
  c = c2 / n;
  s = s2 / n;
}

template <class T>
void pendulum_substep(T& c, T& s, T& w, const T& u) {
  T acc = (3.0 * kPendG / (2.0 * kPendL)) * s + (3.0 / (kPendM * kPendL * kPendL)) * u;
  w = clamp(w + kPendDt * acc, -kPendMaxSpeed, kPendMaxSpeed);
  T dth = kPendDt * w;
  rotate_renorm(c, s, dth);
}

template <class T>
T pendulum_sub_reward(const T& c, const T& s, const T& w, const T& u) {
  using std::atan2;
  T th = atan2(s, c);
  return -(th * th + 0.1 * (w * w) + 0.001 * (u * u));
}

// Mean reward over sub-steps, each evaluated at the pre-sub-step state.
template <class T>
T pendulum_step_core(T& c, T& s, T& w, const T& u, int repeat) {
  T r = pendulum_sub_reward(c, s, w, u);
  pendulum_substep(c, s, w, u);
  for (int k = 1; k < repeat; ++k) {
    r = r + pendulum_sub_reward(c, s, w, u);
    pendulum_substep(c, s, w, u);
  }
  return r * (1.0 / repeat);
}

// --- cartpole swing-up ---------------------------------------------------
// theta = 0 is upright; state [x, xdot, cos(th), sin(th), thdot].

constexpr double kCpG = 9.8;
constexpr double kCpMassCart = 1.0;
constexpr double kCpMassPole = 0.1;
constexpr double kCpHalfLen = 0.5;
constexpr double kCpDt = 0.01;
constexpr double kCpMaxForce = 10.0;

template <class T>
void cartpole_substep(T& x, T& v, T& c, T& s, T& w, const T& f) {
  constexpr double total = kCpMassCart + kCpMassPole;
  T temp = (f + kCpMassPole * kCpHalfLen * (w * w) * s) * (1.0 / total);
  T denom = kCpHalfLen * (4.0 / 3.0) - (kCpMassPole * kCpHalfLen / total) * (c * c);
  T wdot = (kCpG * s - c * temp) / denom;
  T vdot = temp - (kCpMassPole * kCpHalfLen / total) * (wdot * c);
  // semi-implicit Euler
  v = v + kCpDt * vdot;
  w = w + kCpDt * wdot;
  x = x + kCpDt * v;
  T dth = kCpDt * w;
  rotate_renorm(c, s, dth);
}

template <class T>
T cartpole_sub_reward(const T& x, const T& c) {
  return c - 0.01 * (x * x);
}

template <class T>
T cartpole_step_core(T& x, T& v, T& c, T& s, T& w, const T& f, int repeat) {
  T r = cartpole_sub_reward(x, c);
  cartpole_substep(x, v, c, s, w, f);
  for (int k = 1; k < repeat; ++k) {
    r = r + cartpole_sub_reward(x, c);
    cartpole_substep(x, v, c, s, w, f);
  }
  return r * (1.0 / repeat);
}

void check_action_finite(const Vec& a) {
  for (int i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i])) throw std::invalid_argument("step: non-finite action");
}

class PendulumEnv final : public ContinuousEnv {
 public:
  PendulumEnv() {
    spec_.id = "pendulum";
    spec_.state_dim = 3;
    spec_.action_dim = 1;
    spec_.action_bound = Vec::Constant(1, kPendMaxTorque);
    spec_.dt = kPendDt;
    spec_.action_repeat = 4;
    spec_.episode_len = 200;
    spec_.gamma = 0.95;
  }

  const EnvSpec& spec() const override { return spec_; }

  Vec reset(Rng& rng) const override {
    double th = rng.uniform(-M_PI, M_PI);
    double w = rng.uniform(-1.0, 1.0);
    Vec s(3);
    s << std::cos(th), std::sin(th), w;
    return s;
  }

  StepResult step(const Vec& state, const Vec& action, int elapsed) const override {
    check_action_finite(action);
    double c = state[0], s = state[1], w = state[2];
    double u = clamp(action[0], -kPendMaxTorque, kPendMaxTorque);
    double r = pendulum_step_core(c, s, w, u, spec_.action_repeat);
    StepResult out;
    out.next.resize(3);
    out.next << c, s, w;
    out.reward = r;
    out.truncated = (elapsed + 1 >= spec_.episode_len);
    return out;
  }

  DiffStep step_diff(Tape& tape, Var state, Var action) const override {
    Var c = slice_cols(state, 0, 1);
    Var s = slice_cols(state, 1, 2);
    Var w = slice_cols(state, 2, 3);
    Var u = clamp(action, -kPendMaxTorque, kPendMaxTorque);
    Var r = pendulum_step_core(c, s, w, u, spec_.action_repeat);
    std::array<Var, 3> parts{c, s, w};
    return {concat_cols(parts), r};
  }

  double true_reward(const Vec& state, const Vec& action) const override {
    double c = state[0], s = state[1], w = state[2];
    double u = clamp(action[0], -kPendMaxTorque, kPendMaxTorque);
    return pendulum_step_core(c, s, w, u, spec_.action_repeat);
  }

  void step_batch(const Mat& states, const Mat& actions, Mat& next, Vec& reward) const override {
    int b = static_cast<int>(states.rows());
    next.resize(b, 3);
    reward.resize(b);
    for (int i = 0; i < b; ++i) {
      double c = states(i, 0), s = states(i, 1), w = states(i, 2);
      double u = clamp(actions(i, 0), -kPendMaxTorque, kPendMaxTorque);
      reward[i] = pendulum_step_core(c, s, w, u, spec_.action_repeat);
      next(i, 0) = c;
      next(i, 1) = s;
      next(i, 2) = w;
    }
  }

 private:
  EnvSpec spec_;
};

class CartpoleSwingupEnv final : public ContinuousEnv {
 public:
  CartpoleSwingupEnv() {
    spec_.id = "cartpole_swingup";
    spec_.state_dim = 5;
    spec_.action_dim = 1;
    spec_.action_bound = Vec::Constant(1, kCpMaxForce);
    spec_.dt = kCpDt;
    spec_.action_repeat = 2;
    spec_.episode_len = 500;
    spec_.gamma = 0.99;
  }

  const EnvSpec& spec() const override { return spec_; }

  Vec reset(Rng& rng) const override {
    double x = rng.uniform(-0.05, 0.05);
    double v = rng.uniform(-0.05, 0.05);
    double th = M_PI + rng.uniform(-0.05, 0.05);  // hanging down
    double w = rng.uniform(-0.05, 0.05);
    Vec s(5);
    s << x, v, std::cos(th), std::sin(th), w;
    return s;
  }

  StepResult step(const Vec& state, const Vec& action, int elapsed) const override {
    check_action_finite(action);
    double x = state[0], v = state[1], c = state[2], s = state[3], w = state[4];
    double f = clamp(action[0], -kCpMaxForce, kCpMaxForce);
    double r = cartpole_step_core(x, v, c, s, w, f, spec_.action_repeat);
    StepResult out;
    out.next.resize(5);
    out.next << x, v, c, s, w;
    out.reward = r;
    out.truncated = (elapsed + 1 >= spec_.episode_len);
    return out;
  }

  DiffStep step_diff(Tape& tape, Var state, Var action) const override {
    Var x = slice_cols(state, 0, 1);
    Var v = slice_cols(state, 1, 2);
    Var c = slice_cols(state, 2, 3);
    Var s = slice_cols(state, 3, 4);
    Var w = slice_cols(state, 4, 5);
    Var f = clamp(action, -kCpMaxForce, kCpMaxForce);
    Var r = cartpole_step_core(x, v, c, s, w, f, spec_.action_repeat);
    std::array<Var, 5> parts{x, v, c, s, w};
    return {concat_cols(parts), r};
  }

  double true_reward(const Vec& state, const Vec& action) const override {
    double x = state[0], v = state[1], c = state[2], s = state[3], w = state[4];
    double f = clamp(action[0], -kCpMaxForce, kCpMaxForce);
    return cartpole_step_core(x, v, c, s, w, f, spec_.action_repeat);
  }

  void step_batch(const Mat& states, const Mat& actions, Mat& next, Vec& reward) const override {
    int b = static_cast<int>(states.rows());
    next.resize(b, 5);
    reward.resize(b);
    for (int i = 0; i < b; ++i) {
      double x = states(i, 0), v = states(i, 1), c = states(i, 2), s = states(i, 3), w = states(i, 4);
      double f = clamp(actions(i, 0), -kCpMaxForce, kCpMaxForce);
      reward[i] = cartpole_step_core(x, v, c, s, w, f, spec_.action_repeat);
      next(i, 0) = x;
      next(i, 1) = v;
      next(i, 2) = c;
      next(i, 3) = s;
      next(i, 4) = w;
    }
  }

 private:
  EnvSpec spec_;
};

}  // namespace

std::unique_ptr<ContinuousEnv> make_continuous_env(const std::string& id) {
  if (id == "pendulum") return std::make_unique<PendulumEnv>();
  if (id == "cartpole_swingup") return std::make_unique<CartpoleSwingupEnv>();
  throw std::invalid_argument("unknown continuous environment: " + id);
}

// --- mini breakout -------------------------------------------------------

int BreakoutState::brick_count() const {
  int n = 0;
  for (uint8_t b : bricks) n += b;
  return n;
}

Vec BreakoutState::observation() const {
  Vec obs = Vec::Zero(400);
  obs[9 * 10 + paddle_col] = 1.0;                    // channel 0: paddle
  obs[100 + ball_row * 10 + ball_col] = 1.0;         // channel 1: ball
  obs[200 + prev_row * 10 + prev_col] = 1.0;         // channel 2: trail
  for (int i = 0; i < 100; ++i) obs[300 + i] = bricks[i];  // channel 3: bricks
  return obs;
}

BreakoutState MiniBreakout::reset(Rng& rng) const {
  BreakoutState s;
  for (int r = 1; r <= 3; ++r)
    for (int c = 0; c < kGrid; ++c) s.bricks[r * kGrid + c] = 1;
  s.paddle_col = 4;
  s.ball_row = 4;
  s.ball_col = 1 + rng.uniform_int(8);
  s.vy = 1;
  s.vx = rng.uniform_int(2) == 0 ? -1 : 1;
  s.prev_row = s.ball_row - s.vy;
  s.prev_col = s.ball_col - s.vx;
  s.elapsed = 0;
  return s;
}

BreakoutStep MiniBreakout::step(const BreakoutState& state, int action) const {
  if (action < 0 || action >= kNumActions) throw std::invalid_argument("mini_breakout: bad action");
  BreakoutStep out;
  BreakoutState& s = out.next;
  s = state;
  s.paddle_col = clamp(s.paddle_col + (action - 1), 0, kGrid - 1);

  int nr = s.ball_row + s.vy;
  int nc = s.ball_col + s.vx;
  if (nc < 0 || nc >= kGrid) {  // side wall
    s.vx = -s.vx;
    nc = s.ball_col + s.vx;
  }
  if (nr < 0) {  // ceiling
    s.vy = -s.vy;
    nr = s.ball_row + s.vy;
  }

  if (nr >= 0 && nr < kGrid && s.bricks[nr * kGrid + nc]) {
    // Brick hit: remove it, bounce back; the ball keeps its cell this step.
    s.bricks[nr * kGrid + nc] = 0;
    out.reward = 1.0;
    s.vy = -s.vy;
    s.prev_row = s.ball_row;
    s.prev_col = s.ball_col;
    if (s.brick_count() == 0) out.terminal = true;
  } else if (nr == kGrid - 1) {
    if (nc == s.paddle_col) {
      // Paddle bounce: ball keeps its cell, heading up next step.
      s.vy = -1;
      s.prev_row = s.ball_row;
      s.prev_col = s.ball_col;
    } else {
      s.prev_row = s.ball_row;
      s.prev_col = s.ball_col;
      s.ball_row = nr;
      s.ball_col = nc;
      out.terminal = true;  // ball exits the bottom
    }
  } else {
    s.prev_row = s.ball_row;
    s.prev_col = s.ball_col;
    s.ball_row = nr;
    s.ball_col = nc;
  }

  s.elapsed = state.elapsed + 1;
  if (!out.terminal && s.elapsed >= spec_.episode_len) out.truncated = true;
  return out;
}

}  // namespace vex
