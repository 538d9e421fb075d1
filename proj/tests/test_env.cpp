#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "vex/env.hpp"

using namespace vex;

namespace {

Vec pend_state(double theta, double thdot) {
  Vec s(3);
  s << std::cos(theta), std::sin(theta), thdot;
  return s;
}

}  // namespace

TEST_CASE("reset is deterministic given the rng state and stays on the circle") {
  auto env = make_continuous_env("pendulum");
  Rng a(123), b(123);
  Vec s1 = env->reset(a), s2 = env->reset(b);
  CHECK((s1 - s2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s1[0] * s1[0] + s1[1] * s1[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pendulum reset angles are uniform on [-pi, pi] (KS at 1%)") {
  auto env = make_continuous_env("pendulum");
  Rng rng(7);
  const int n = 10000;
  std::vector<double> thetas(n);
  for (int i = 0; i < n; ++i) {
    Vec s = env->reset(rng);
    thetas[i] = std::atan2(s[1], s[0]);
  }
  std::sort(thetas.begin(), thetas.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    double cdf = (thetas[i] + M_PI) / (2 * M_PI);
    d = std::max(d, std::abs(cdf - (i + 1.0) / n));
    d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
  }
  CHECK(d < 1.63 / std::sqrt(static_cast<double>(n)));  // KS critical value, alpha = 0.01
}

TEST_CASE("pendulum upright equilibrium is a fixed point with zero reward") {
  auto env = make_continuous_env("pendulum");
  Vec s = pend_state(0.0, 0.0);
  Vec u = Vec::Zero(1);
  StepResult r = env->step(s, u);
  CHECK((r.next - s).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(r.reward == doctest::Approx(0.0));
  CHECK(env->true_reward(s, u) == doctest::Approx(0.0));
}

TEST_CASE("pendulum hanging with zero velocity and action gives -pi^2 instantaneous reward") {
  auto env = make_continuous_env("pendulum");
  Vec s = pend_state(M_PI, 0.0);
  Vec u = Vec::Zero(1);
  // theta = pi is an (unstable) equilibrium: every sub-step reward is -pi^2
  StepResult r = env->step(s, u);
  CHECK(r.reward == doctest::Approx(-M_PI * M_PI).epsilon(1e-9));
}

TEST_CASE("pendulum reward is invariant to angle wrapping") {
  auto env = make_continuous_env("pendulum");
  Vec u = Vec::Constant(1, 0.4);
  // cos/sin state representation makes theta and theta + 2pi identical
  Vec a = pend_state(2.5, 0.3), b = pend_state(2.5 + 2 * M_PI, 0.3);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(env->true_reward(a, u) == doctest::Approx(env->true_reward(b, u)));
}

TEST_CASE("step preserves cos^2 + sin^2 = 1") {
  for (const char* id : {"pendulum", "cartpole_swingup"}) {
    auto env = make_continuous_env(id);
    Rng rng(3);
    Vec s = env->reset(rng);
    int ci = env->spec().state_dim == 3 ? 0 : 2;
    for (int t = 0; t < 200; ++t) {
      Vec u = Vec::Constant(1, rng.uniform(-1.0, 1.0) * env->spec().action_bound[0]);
      s = env->step(s, u, t).next;
      CHECK(std::abs(s[ci] * s[ci] + s[ci + 1] * s[ci + 1] - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("step and step_diff agree to 1e-12 on 1000 random pairs") {
  for (const char* id : {"pendulum", "cartpole_swingup"}) {
    auto env = make_continuous_env(id);
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
      Vec s = env->reset(rng);
      s[env->spec().state_dim - 1] = rng.uniform(-5.0, 5.0);
      Vec u = Vec::Constant(1, rng.uniform(-1.5, 1.5) * env->spec().action_bound[0]);
      StepResult plain = env->step(s, u);

      Tape tape;
      auto d = env->step_diff(tape, tape.leaf(Mat(s.transpose())), tape.leaf(Mat(u.transpose())));
      CHECK((tape.val(d.next).map().row(0).transpose() - plain.next).cwiseAbs().maxCoeff() <
            1e-12);
      CHECK(std::abs(tape.val(d.reward).data[0] - plain.reward) < 1e-12);
      CHECK(std::abs(env->true_reward(s, u) - plain.reward) < 1e-12);
    }
  }
}

TEST_CASE("step_batch matches step row by row") {
  for (const char* id : {"pendulum", "cartpole_swingup"}) {
    auto env = make_continuous_env(id);
    Rng rng(21);
    const int n = 64;
    Mat states(n, env->spec().state_dim), actions(n, 1);
    for (int i = 0; i < n; ++i) {
      states.row(i) = env->reset(rng).transpose();
      actions(i, 0) = rng.uniform(-1.0, 1.0) * env->spec().action_bound[0];
    }
    Mat next;
    Vec reward;
    env->step_batch(states, actions, next, reward);
    for (int i = 0; i < n; ++i) {
      StepResult r = env->step(states.row(i).transpose(), actions.row(i).transpose());
      CHECK((next.row(i).transpose() - r.next).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(std::abs(reward[i] - r.reward) < 1e-12);
    }
  }
}

TEST_CASE("step_diff Jacobian matches finite differences") {
  for (const char* id : {"pendulum", "cartpole_swingup"}) {
    auto env = make_continuous_env(id);
    Rng rng(31);
    const int sd = env->spec().state_dim;
    for (int trial = 0; trial < 20; ++trial) {
      Vec s = env->reset(rng);
      Vec u = Vec::Constant(1, rng.uniform(-0.8, 0.8) * env->spec().action_bound[0]);

      auto eval = [&](const Vec& sv, const Vec& uv, int out) {
        StepResult r = env->step(sv, uv);
        return out < sd ? r.next[out] : r.reward;
      };
      for (int out = 0; out <= sd; ++out) {
        Tape tape;
        Var sl = tape.leaf(Mat(s.transpose()));
        Var ul = tape.leaf(Mat(u.transpose()));
        auto d = env->step_diff(tape, sl, ul);
        Var scalar_out = out < sd ? slice_cols(d.next, out, out + 1) : d.reward;
        tape.backward(scalar_out);

        const double h = 1e-6;
        for (int j = 0; j < sd; ++j) {
          Vec sp = s, sm = s;
          sp[j] += h;
          sm[j] -= h;
          double fd = (eval(sp, u, out) - eval(sm, u, out)) / (2 * h);
          double an = tape.grad(sl).at(0, j);
          CHECK(std::abs(an - fd) / std::max({std::abs(fd), std::abs(an), 1.0}) < 1e-4);
        }
        Vec up = u, um = u;
        up[0] += h;
        um[0] -= h;
        double fd = (eval(s, up, out) - eval(s, um, out)) / (2 * h);
        double an = tape.grad(ul).at(0, 0);
        CHECK(std::abs(an - fd) / std::max({std::abs(fd), std::abs(an), 1.0}) < 1e-4);
      }
    }
  }
}

TEST_CASE("pendulum reward gradient in torque vanishes at the upright rest point") {
  // At (theta=0, thdot=0, u=0) the control cost derivative -2*0.001*u is
  // zero and the state terms are quadratic in u, so dr/du = 0 exactly.
  auto env = make_continuous_env("pendulum");
  Tape tape;
  Var s = tape.leaf(Mat(pend_state(0.0, 0.0).transpose()));
  Var u = tape.leaf(Mat(Mat::Zero(1, 1)));
  auto d = env->step_diff(tape, s, u);
  tape.backward(d.reward);
  CHECK(std::abs(tape.grad(u).at(0, 0)) < 1e-12);
}

TEST_CASE("episodes truncate exactly at the limit and never terminate") {
  auto env = make_continuous_env("pendulum");
  Rng rng(5);
  Vec s = env->reset(rng);
  for (int t = 0; t < env->spec().episode_len; ++t) {
    StepResult r = env->step(s, Vec::Zero(1), t);
    CHECK_FALSE(r.terminal);
    CHECK(r.truncated == (t == env->spec().episode_len - 1));
    s = r.next;
  }
}

TEST_CASE("non-finite action is rejected") {
  auto env = make_continuous_env("pendulum");
  Vec s = pend_state(1.0, 0.0);
  Vec bad = Vec::Constant(1, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(env->step(s, bad), std::invalid_argument);
}

TEST_CASE("cartpole: work done by a constant force matches the energy change") {
  auto env = make_continuous_env("cartpole_swingup");
  // E = cart KE + pole KE (translation + rotation about CM) + pole PE,
  // for the standard cart-pole with pole half-length l and mass m.
  const double M = 1.0, m = 0.1, l = 0.5, g = 9.8;
  auto energy = [&](const Vec& s) {
    double v = s[1], c = s[2], sn = s[3], w = s[4];
    double ke_cart = 0.5 * M * v * v;
    double ke_pole = 0.5 * m * (v * v + 2 * l * w * v * c + l * l * w * w) +
                     0.5 * (m * (2 * l) * (2 * l) / 12.0) * w * w;
    double pe = m * g * l * c;
    return ke_cart + ke_pole + pe;
  };
  Rng rng(9);
  Vec s = env->reset(rng);
  double f = env->spec().action_bound[0];
  for (int t = 0; t < 50; ++t) {
    StepResult r = env->step(s, Vec::Constant(1, f), t);
    double work = f * (r.next[0] - s[0]);  // force acts on the cart only
    double de = energy(r.next) - energy(s);
    // semi-implicit Euler carries an O(dt) energy defect (~1e-2 at
    // dt=0.01; halving dt halves it), so the bound scales with dt.
    CHECK(std::abs(de - work) < 1.5 * env->spec().dt * (1.0 + std::abs(de) + std::abs(work)));
    s = r.next;
  }
}

TEST_CASE("breakout: reset layout invariants") {
  MiniBreakout env;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    BreakoutState s = env.reset(rng);
    CHECK(s.brick_count() == 30);
    CHECK(s.ball_row == 4);
    CHECK(s.ball_col >= 1);
    CHECK(s.ball_col <= 8);
    CHECK(std::abs(s.vx) == 1);
    CHECK(std::abs(s.vy) == 1);
    Vec obs = s.observation();
    double paddles = obs.segment(90, 10).sum();
    CHECK(paddles == 1.0);
    CHECK(obs.segment(100, 100).sum() == 1.0);  // exactly one ball cell
  }
}

TEST_CASE("breakout: ball moving up into a brick removes it and scores 1") {
  MiniBreakout env;
  Rng rng(2);
  BreakoutState s = env.reset(rng);
  s.ball_row = 4;
  s.ball_col = 5;
  s.vy = -1;
  s.vx = 1;
  REQUIRE(s.bricks[3 * 10 + 6] == 1);  // brick at the target cell (row 3, col 6)
  BreakoutStep out = env.step(s, 1);
  CHECK(out.reward == 1.0);
  CHECK(out.next.bricks[3 * 10 + 6] == 0);
  CHECK(out.next.brick_count() == 29);
  CHECK(out.next.vy == 1);  // bounced back down
  CHECK_FALSE(out.terminal);
}

TEST_CASE("breakout: ball past the paddle terminates the episode") {
  MiniBreakout env;
  Rng rng(2);
  BreakoutState s = env.reset(rng);
  s.ball_row = 8;
  s.ball_col = 2;
  s.vy = 1;
  s.vx = 1;
  s.paddle_col = 7;  // nowhere near the ball
  BreakoutStep out = env.step(s, 1);
  CHECK(out.terminal);
  CHECK(out.reward == 0.0);
}

TEST_CASE("breakout: paddle bounce keeps the ball alive") {
  MiniBreakout env;
  Rng rng(2);
  BreakoutState s = env.reset(rng);
  s.ball_row = 8;
  s.ball_col = 3;
  s.vy = 1;
  s.vx = 1;
  s.paddle_col = 4;
  BreakoutStep out = env.step(s, 1);  // paddle stays at col 4 = landing cell
  CHECK_FALSE(out.terminal);
  CHECK(out.next.vy == -1);
}

TEST_CASE("breakout: bricks never reappear and total reward counts removals") {
  MiniBreakout env;
  Rng rng(11);
  for (int ep = 0; ep < 20; ++ep) {
    BreakoutState s = env.reset(rng);
    int bricks = s.brick_count();
    double total = 0.0;
    for (int t = 0; t < 500; ++t) {
      BreakoutStep out = env.step(s, rng.uniform_int(3));
      CHECK(out.next.brick_count() <= s.brick_count());
      total += out.reward;
      s = out.next;
      if (out.terminal || out.truncated) break;
    }
    CHECK(total == doctest::Approx(bricks - s.brick_count()));
  }
}

TEST_CASE("breakout: deterministic transitions and intact velocity invariants") {
  MiniBreakout env;
  Rng rng(13);
  BreakoutState s = env.reset(rng);
  for (int t = 0; t < 300; ++t) {
    int a = rng.uniform_int(3);
    BreakoutStep x = env.step(s, a), y = env.step(s, a);
    CHECK(x.next.ball_row == y.next.ball_row);
    CHECK(x.next.ball_col == y.next.ball_col);
    CHECK(x.reward == y.reward);
    CHECK(std::abs(x.next.vx) == 1);
    CHECK(std::abs(x.next.vy) == 1);
    if (x.terminal) break;
    s = x.next;
  }
}
