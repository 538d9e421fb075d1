#include "vex/nn.hpp"

#include <cmath>

namespace vex {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

double softplus_d(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// log(1 - tanh(u)^2) in a form stable for large |u|.
double log1m_tanh_sq(double u) { return 2.0 * (std::log(2.0) - u - softplus_d(-2.0 * u)); }
}  // namespace

ParameterSet ParameterSet::mlp(const std::vector<LayerSpec>& layers, Rng& rng) {
  ParameterSet p;
  p.layers = layers;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    Tensor w(l.in, l.out);
    double scale = std::sqrt(2.0 / l.in);  // He init
    if (l.act == Activation::None || l.act == Activation::Tanh) scale = std::sqrt(1.0 / l.in);
    for (double& v : w.data) v = rng.normal() * scale;
    Tensor b(1, l.out);
    p.tensors["W" + std::to_string(i)] = std::move(w);
    p.tensors["b" + std::to_string(i)] = std::move(b);
  }
  return p;
}

TapedParams TapedParams::push(Tape& tape, const ParameterSet& params) {
  TapedParams tp;
  tp.source = &params;
  for (const auto& [name, tensor] : params.tensors) tp.vars[name] = tape.leaf(tensor);
  return tp;
}

GradMap TapedParams::grads(const Tape& tape) const {
  GradMap g;
  for (const auto& [name, var] : vars) g[name] = tape.grad(var);
  return g;
}

Var forward_mlp(Tape& tape, const TapedParams& params, Var input) {
  const ParameterSet& p = *params.source;
  if (tape.val(input).cols != p.layers.front().in)
    throw ShapeError("forward_mlp: input dimension mismatch");
  Var h = input;
  for (size_t i = 0; i < p.layers.size(); ++i) {
    Var w = params.vars.at("W" + std::to_string(i));
    Var b = params.vars.at("b" + std::to_string(i));
    h = add_rowvec(matmul(h, w), b);
    switch (p.layers[i].act) {
      case Activation::Relu: h = relu(h); break;
      case Activation::Tanh: h = vex::tanh(h); break;
      case Activation::None: break;
    }
  }
  return h;
}

Mat forward_mlp_eval(const ParameterSet& params, const Mat& input) {
  if (input.cols() != params.layers.front().in)
    throw ShapeError("forward_mlp_eval: input dimension mismatch");
  Mat h = input;
  for (size_t i = 0; i < params.layers.size(); ++i) {
    const Tensor& w = params.at("W" + std::to_string(i));
    const Tensor& b = params.at("b" + std::to_string(i));
    Mat z = h * w.map();
    z.rowwise() += b.map().row(0);
    switch (params.layers[i].act) {
      case Activation::Relu: h = z.cwiseMax(0.0); break;
      case Activation::Tanh: h = z.array().tanh().matrix(); break;
      case Activation::None: h = std::move(z); break;
    }
  }
  return h;
}

SquashedSample sample_squashed_tape(Tape& tape, Var head_out, const Mat& noise, const Vec& bound) {
  int a_dim = static_cast<int>(bound.size());
  if (tape.val(head_out).cols != 2 * a_dim) throw ShapeError("squashed head: expected 2A columns");
  if (noise.cols() != a_dim) throw ShapeError("squashed head: noise dimension mismatch");
  Var mean = slice_cols(head_out, 0, a_dim);
  Var log_std = clamp(slice_cols(head_out, a_dim, 2 * a_dim), kLogStdMin, kLogStdMax);
  Var eps = tape.leaf(Tensor::from(noise));
  Var u = add(mean, mul(vex::exp(log_std), eps));
  Var tanh_u = vex::tanh(u);

  Mat bound_row(1, a_dim);
  bound_row.row(0) = bound.transpose();
  Mat bound_full = bound_row.colwise().replicate(noise.rows());
  Var action = mul(tanh_u, tape.leaf(Tensor::from(bound_full)));

  // per-dim: -log_std - 0.5*log(2pi) - 0.5*eps^2 - log(1 - tanh(u)^2) - log(bound)
  Var correction = scale(sub(add_const(neg(u), std::log(2.0)), softplus(scale(u, -2.0))), 2.0);
  Var lp = sub(sub(neg(add_const(log_std, kHalfLog2Pi)), scale(square(eps), 0.5)), correction);
  double log_bound_sum = bound.array().log().sum();
  Var log_prob = add_const(sum_cols(lp), -log_bound_sum);
  return {action, log_prob};
}

SquashedSampleEval sample_squashed_eval(const Mat& head_out, const Mat& noise, const Vec& bound) {
  int a_dim = static_cast<int>(bound.size());
  int b = static_cast<int>(head_out.rows());
  SquashedSampleEval out;
  out.action.resize(b, a_dim);
  out.log_prob.resize(b);
  double log_bound_sum = bound.array().log().sum();
  for (int i = 0; i < b; ++i) {
    double lp = -log_bound_sum;
    for (int j = 0; j < a_dim; ++j) {
      double mean = head_out(i, j);
      double log_std = clamp(head_out(i, a_dim + j), kLogStdMin, kLogStdMax);
      double eps = noise(i, j);
      double u = mean + std::exp(log_std) * eps;
      out.action(i, j) = bound[j] * std::tanh(u);
      lp += -log_std - kHalfLog2Pi - 0.5 * eps * eps - log1m_tanh_sq(u);
    }
    out.log_prob[i] = lp;
  }
  return out;
}

Mat squashed_mean_action(const Mat& head_out, const Vec& bound) {
  int a_dim = static_cast<int>(bound.size());
  Mat action(head_out.rows(), a_dim);
  for (int i = 0; i < head_out.rows(); ++i)
    for (int j = 0; j < a_dim; ++j) action(i, j) = bound[j] * std::tanh(head_out(i, j));
  return action;
}

Vec squashed_log_prob(const Mat& head_out, const Mat& actions, const Vec& bound) {
  int a_dim = static_cast<int>(bound.size());
  int b = static_cast<int>(head_out.rows());
  Vec lp(b);
  double log_bound_sum = bound.array().log().sum();
  for (int i = 0; i < b; ++i) {
    double acc = -log_bound_sum;
    for (int j = 0; j < a_dim; ++j) {
      double mean = head_out(i, j);
      double log_std = clamp(head_out(i, a_dim + j), kLogStdMin, kLogStdMax);
      double y = clamp(actions(i, j) / bound[j], -1.0 + 1e-9, 1.0 - 1e-9);
      double u = std::atanh(y);
      double eps = (u - mean) / std::exp(log_std);
      acc += -log_std - kHalfLog2Pi - 0.5 * eps * eps - log1m_tanh_sq(u);
    }
    lp[i] = acc;
  }
  return lp;
}

AdamState AdamState::create(const ParameterSet& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& [name, tensor] : params.tensors) {
    s.m[name] = Tensor::zeros(tensor.rows, tensor.cols);
    s.v[name] = Tensor::zeros(tensor.rows, tensor.cols);
  }
  return s;
}

AdamReport adam_step(AdamState& state, ParameterSet& params, const GradMap& grads) {
  for (const auto& [name, g] : grads)
    if (!g.all_finite()) return {.skipped = true};

  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params.tensors) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (!g.same_shape(p)) throw ShapeError("adam_step: gradient shape mismatch for " + name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (int i = 0; i < p.size(); ++i) {
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
      v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  return {};
}

void polyak_update(ParameterSet& target, const ParameterSet& online, double tau) {
  if (tau < 0.0 || tau > 1.0) throw ShapeError("polyak_update: tau out of [0,1]");
  for (auto& [name, t] : target.tensors) {
    const Tensor& o = online.at(name);
    if (!o.same_shape(t)) throw ShapeError("polyak_update: shape mismatch for " + name);
    for (int i = 0; i < t.size(); ++i) t.data[i] = (1.0 - tau) * t.data[i] + tau * o.data[i];
  }
}

GradStats gradient_stats(const GradMap& grads) {
  GradStats s;
  double sum = 0.0;
  long n = 0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data) {
      if (!std::isfinite(v)) s.finite = false;
      sum += v;
      ++n;
    }
  }
  if (n == 0) return s;
  s.mean = sum / n;
  double ss = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  return s;
}

double grad_norm(const GradMap& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data) ss += v * v;
  return std::sqrt(ss);
}

}  // namespace vex
