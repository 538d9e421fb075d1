#include "vex/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vex {

void OracleModel::predict(const Mat& states, const Mat& actions, Rng&, Mat& next, Vec& reward,
                          std::vector<uint8_t>& terminal) const {
  env_.step_batch(states, actions, next, reward);
  terminal.assign(states.rows(), 0);
}

DiffPrediction OracleModel::predict_diff(Tape& tape, Var states, Var actions, Rng&) const {
  auto step = env_.step_diff(tape, states, actions);
  return {step.next, step.reward};
}

Var soft_clamp(Tape&, Var x, double lo, double hi) {
  Var upper = hi - softplus(hi - x);
  return lo + softplus(upper - lo);
}

EnsembleModel::EnsembleModel(const ContinuousEnv& env, int hidden_units, Rng& rng) : env_(env) {
  const int s = env.spec().state_dim;
  const int in = s + env.spec().action_dim;
  std::vector<LayerSpec> layers;
  int prev = in;
  for (int l = 0; l < 4; ++l) {
    layers.push_back({prev, hidden_units, Activation::Relu});
    prev = hidden_units;
  }
  layers.push_back({prev, 2 * s, Activation::None});
  for (int m = 0; m < kMembers; ++m) members_[m] = ParameterSet::mlp(layers, rng);
  in_mean_ = Vec::Zero(in);
  in_std_ = Vec::Ones(in);
  delta_mean_ = Vec::Zero(s);
  delta_std_ = Vec::Ones(s);
}

void EnsembleModel::set_normalizers(Vec in_mean, Vec in_std, Vec delta_mean, Vec delta_std) {
  in_mean_ = std::move(in_mean);
  in_std_ = std::move(in_std);
  delta_mean_ = std::move(delta_mean);
  delta_std_ = std::move(delta_std);
  trained_ = true;
}

Mat EnsembleModel::member_head(int member, const Mat& states, const Mat& actions) const {
  const int s = env_.spec().state_dim;
  Mat x(states.rows(), states.cols() + actions.cols());
  x << states, actions;
  x = (x.rowwise() - in_mean_.transpose()).array().rowwise() / in_std_.transpose().array();
  Mat out = forward_mlp_eval(members_[member], x);
  for (int i = 0; i < out.rows(); ++i)
    for (int j = s; j < 2 * s; ++j) out(i, j) = soft_clamp(out(i, j), kLogVarMin, kLogVarMax);
  return out;
}

void EnsembleModel::predict(const Mat& states, const Mat& actions, Rng& rng, Mat& next, Vec& reward,
                            std::vector<uint8_t>& terminal) const {
  if (!trained_) throw std::logic_error("ensemble prediction before training");
  const int b = static_cast<int>(states.rows());
  const int s = env_.spec().state_dim;

  std::vector<int> member(b);
  Mat noise(b, s);
  for (int i = 0; i < b; ++i) {
    member[i] = rng.uniform_int(kMembers);
    for (int j = 0; j < s; ++j) noise(i, j) = rng.normal();
  }

  next.resize(b, s);
  for (int m = 0; m < kMembers; ++m) {
    std::vector<int> rows;
    for (int i = 0; i < b; ++i)
      if (member[i] == m) rows.push_back(i);
    if (rows.empty()) continue;
    Mat sub_s(rows.size(), s), sub_a(rows.size(), actions.cols());
    for (size_t k = 0; k < rows.size(); ++k) {
      sub_s.row(k) = states.row(rows[k]);
      sub_a.row(k) = actions.row(rows[k]);
    }
    Mat head = member_head(m, sub_s, sub_a);
    for (size_t k = 0; k < rows.size(); ++k) {
      int i = rows[k];
      for (int j = 0; j < s; ++j) {
        double mean = head(k, j);
        double std = std::exp(0.5 * head(k, s + j));
        double delta = (mean + std * noise(i, j)) * delta_std_[j] + delta_mean_[j];
        next(i, j) = states(i, j) + delta;
      }
    }
  }

  reward.resize(b);
  for (int i = 0; i < b; ++i)
    reward[i] = env_.true_reward(states.row(i).transpose(), actions.row(i).transpose());
  terminal.assign(b, 0);
}

DiffPrediction EnsembleModel::predict_diff(Tape& tape, Var states, Var actions, Rng& rng) const {
  if (!trained_) throw std::logic_error("ensemble prediction before training");
  const int b = tape.val(states).rows;
  const int s = env_.spec().state_dim;

  std::vector<int> member(b);
  Mat noise(b, s);
  for (int i = 0; i < b; ++i) {
    member[i] = rng.uniform_int(kMembers);
    for (int j = 0; j < s; ++j) noise(i, j) = rng.normal();
  }

  std::array<Var, 2> parts{states, actions};
  Var x = concat_cols(std::span<const Var>(parts.data(), 2));
  Mat in_mean_mat = in_mean_.transpose().replicate(b, 1);
  Mat in_invstd_mat = in_std_.cwiseInverse().transpose().replicate(b, 1);
  Var xn = (x - tape.leaf(in_mean_mat)) * tape.leaf(in_invstd_mat);

  Var noise_leaf = tape.leaf(noise);
  // Every member evaluates the full batch; per-row selection is a 0/1 mask.
  Var delta_norm{};
  bool first = true;
  for (int m = 0; m < kMembers; ++m) {
    Mat mask = Mat::Zero(b, s);
    for (int i = 0; i < b; ++i)
      if (member[i] == m) mask.row(i).setOnes();
    auto params = TapedParams::push(tape, members_[m]);
    Var out = forward_mlp(tape, params, xn);
    Var mean = slice_cols(out, 0, s);
    Var logvar = soft_clamp(tape, slice_cols(out, s, 2 * s), kLogVarMin, kLogVarMax);
    Var sample = mean + exp(0.5 * logvar) * noise_leaf;
    Var masked = sample * tape.leaf(mask);
    delta_norm = first ? masked : delta_norm + masked;
    first = false;
  }

  Mat d_std_mat = delta_std_.transpose().replicate(b, 1);
  Mat d_mean_mat = delta_mean_.transpose().replicate(b, 1);
  Var delta = delta_norm * tape.leaf(d_std_mat) + tape.leaf(d_mean_mat);
  Var next = states + delta;

  // Rewards stay on the true reward function even with learned dynamics.
  Var reward = env_.step_diff(tape, states, actions).reward;
  return {next, reward};
}

namespace {

constexpr double kHalfLog2PiModel = 0.9189385332046727;

double gaussian_nll(const Mat& head, const Mat& target_norm) {
  const int s = static_cast<int>(target_norm.cols());
  double total = 0.0;
  for (int i = 0; i < head.rows(); ++i) {
    for (int j = 0; j < s; ++j) {
      double lv = head(i, s + j);
      double d = target_norm(i, j) - head(i, j);
      total += 0.5 * lv + 0.5 * d * d * std::exp(-lv) + kHalfLog2PiModel;
    }
  }
  return total / head.rows();
}

}  // namespace

ModelTrainReport EnsembleModel::train(const Mat& states, const Mat& actions,
                                      const Mat& next_states, const ModelTrainConfig& cfg,
                                      Rng& rng) {
  const int n = static_cast<int>(states.rows());
  const int s = env_.spec().state_dim;
  const int in = s + env_.spec().action_dim;
  if (n < 2) throw std::invalid_argument("ensemble training needs at least 2 transitions");

  Mat x(n, in);
  x << states, actions;
  Mat delta = next_states - states;

  ModelTrainReport report;
  in_mean_ = x.colwise().mean().transpose();
  delta_mean_ = delta.colwise().mean().transpose();
  auto std_of = [&](const Mat& m, const Vec& mean, bool& floored) {
    Vec var = ((m.rowwise() - mean.transpose()).array().square().colwise().mean()).transpose();
    Vec out = var.array().sqrt();
    for (int j = 0; j < out.size(); ++j)
      if (out[j] < 1e-6) {
        out[j] = 1e-6;
        floored = true;
      }
    return out;
  };
  in_std_ = std_of(x, in_mean_, report.variance_floored);
  delta_std_ = std_of(delta, delta_mean_, report.variance_floored);
  trained_ = true;

  Mat xn = (x.rowwise() - in_mean_.transpose()).array().rowwise() / in_std_.transpose().array();
  Mat dn = (delta.rowwise() - delta_mean_.transpose()).array().rowwise() /
           delta_std_.transpose().array();

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  int n_hold = std::max(1, static_cast<int>(n * cfg.holdout_frac));
  int n_train = n - n_hold;
  if (n_train < 1) {
    n_train = 1;
    n_hold = n - 1;
  }
  Mat hold_x(n_hold, in), hold_d(n_hold, s);
  for (int i = 0; i < n_hold; ++i) {
    hold_x.row(i) = xn.row(perm[n_train + i]);
    hold_d.row(i) = dn.row(perm[n_train + i]);
  }

  auto holdout_nll = [&](int m) {
    Mat head = forward_mlp_eval(members_[m], hold_x);
    for (int i = 0; i < head.rows(); ++i)
      for (int j = s; j < 2 * s; ++j) head(i, j) = soft_clamp(head(i, j), kLogVarMin, kLogVarMax);
    return gaussian_nll(head, hold_d);
  };

  report.train_nll.resize(kMembers, 0.0);
  report.holdout_nll.resize(kMembers, 0.0);
  report.initial_holdout_nll.resize(kMembers, 0.0);

  for (int m = 0; m < kMembers; ++m) {
    report.initial_holdout_nll[m] = holdout_nll(m);

    std::vector<int> boot(n_train);
    for (int i = 0; i < n_train; ++i) boot[i] = perm[rng.uniform_int(n_train)];

    AdamState opt = AdamState::create(members_[m], cfg.lr);
    double best = report.initial_holdout_nll[m];
    auto best_tensors = members_[m].tensors;
    int bad_epochs = 0;
    int epochs = 0;
    double last_train = 0.0;
    bool budget_left = true;
    long member_steps = 0;  // grad-step budget is per member

    for (int e = 0; e < cfg.max_epochs && budget_left; ++e) {
      std::shuffle(boot.begin(), boot.end(), rng.engine());
      double epoch_loss = 0.0;
      int batches = 0;
      for (int start = 0; start < n_train; start += cfg.batch_size) {
        int bsz = std::min(cfg.batch_size, n_train - start);
        Mat bx(bsz, in), bd(bsz, s);
        for (int i = 0; i < bsz; ++i) {
          bx.row(i) = xn.row(boot[start + i]);
          bd.row(i) = dn.row(boot[start + i]);
        }
        Tape tape;
        auto params = TapedParams::push(tape, members_[m]);
        Var out = forward_mlp(tape, params, tape.leaf(bx));
        Var mu = slice_cols(out, 0, s);
        Var lv = soft_clamp(tape, slice_cols(out, s, 2 * s), kLogVarMin, kLogVarMax);
        Var err = tape.leaf(bd) - mu;
        Var nll = mean(sum_cols(0.5 * lv + 0.5 * square(err) * exp(-lv) + kHalfLog2PiModel));
        tape.backward(nll);
        adam_step(opt, members_[m], params.grads(tape));
        epoch_loss += tape.val(nll).data[0];
        ++batches;
        ++report.gradient_steps;
        ++member_steps;
        if (cfg.max_grad_steps > 0 && member_steps >= cfg.max_grad_steps) {
          budget_left = false;
          break;
        }
      }
      last_train = epoch_loss / std::max(1, batches);
      ++epochs;

      double h = holdout_nll(m);
      if (h < best - 1e-8) {
        best = h;
        best_tensors = members_[m].tensors;
        bad_epochs = 0;
      } else if (++bad_epochs >= cfg.patience) {
        break;
      }
    }

    members_[m].tensors = best_tensors;
    report.train_nll[m] = last_train;
    report.holdout_nll[m] = best;
    report.epochs = std::max(report.epochs, epochs);
  }
  return report;
}

}  // namespace vex
