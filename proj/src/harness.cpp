#include "vex/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "vex/model.hpp"

namespace vex {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// --- config ----------------------------------------------------------------

json ExperimentConfig::to_json() const {
  return json{{"env", env},
              {"agent", agent},
              {"expansion", expansion},
              {"model", model},
              {"horizon", horizon},
              {"particles", particles},
              {"seed", seed},
              {"total_steps", total_steps},
              {"eval_interval", eval_interval},
              {"eval_episodes", eval_episodes},
              {"gamma", gamma},
              {"hidden", hidden},
              {"model_hidden", model_hidden},
              {"lr_policy", lr_policy},
              {"lr_critic", lr_critic},
              {"lr_alpha", lr_alpha},
              {"tau", tau},
              {"lambda", lambda},
              {"batch_size", batch_size},
              {"min_replay", min_replay},
              {"capacity", capacity},
              {"init_log_alpha", init_log_alpha},
              {"clip_gradients", clip_gradients},
              {"grad_clip_norm", grad_clip_norm},
              {"ddpg_noise", ddpg_noise},
              {"eps_start", eps_start},
              {"eps_end", eps_end},
              {"eps_decay_frac", eps_decay_frac},
              {"target_sync", target_sync},
              {"n_checkpoints", n_checkpoints},
              {"checkpoint_anchors", checkpoint_anchors},
              {"model_retrain_interval", model_retrain_interval},
              {"model_max_epochs", model_max_epochs},
              {"model_patience", model_patience},
              {"model_holdout", model_holdout},
              {"model_lr", model_lr},
              {"model_max_grad_steps", model_max_grad_steps}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  json known = c.to_json();
  for (const auto& [key, val] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key: " + key);
    (void)val;
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("env", c.env);
    get("agent", c.agent);
    get("expansion", c.expansion);
    get("model", c.model);
    get("horizon", c.horizon);
    get("particles", c.particles);
    get("seed", c.seed);
    get("total_steps", c.total_steps);
    get("eval_interval", c.eval_interval);
    get("eval_episodes", c.eval_episodes);
    get("gamma", c.gamma);
    get("hidden", c.hidden);
    get("model_hidden", c.model_hidden);
    get("lr_policy", c.lr_policy);
    get("lr_critic", c.lr_critic);
    get("lr_alpha", c.lr_alpha);
    get("tau", c.tau);
    get("lambda", c.lambda);
    get("batch_size", c.batch_size);
    get("min_replay", c.min_replay);
    get("capacity", c.capacity);
    get("init_log_alpha", c.init_log_alpha);
    get("clip_gradients", c.clip_gradients);
    get("grad_clip_norm", c.grad_clip_norm);
    get("ddpg_noise", c.ddpg_noise);
    get("eps_start", c.eps_start);
    get("eps_end", c.eps_end);
    get("eps_decay_frac", c.eps_decay_frac);
    get("target_sync", c.target_sync);
    get("n_checkpoints", c.n_checkpoints);
    get("checkpoint_anchors", c.checkpoint_anchors);
    get("model_retrain_interval", c.model_retrain_interval);
    get("model_max_epochs", c.model_max_epochs);
    get("model_patience", c.model_patience);
    get("model_holdout", c.model_holdout);
    get("model_lr", c.model_lr);
    get("model_max_grad_steps", c.model_max_grad_steps);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config value: ") + e.what());
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto one_of = [](const std::string& v, std::initializer_list<const char*> allowed,
                   const char* what) {
    for (const char* a : allowed)
      if (v == a) return;
    throw ConfigError(std::string("invalid ") + what + ": " + v);
  };
  one_of(env, {"pendulum", "cartpole_swingup", "mini_breakout"}, "env");
  one_of(agent, {"sac", "ddpg", "dqn"}, "agent");
  one_of(expansion, {"none", "ce", "ae", "retrace"}, "expansion");
  one_of(model, {"oracle", "learned"}, "model");
  if (horizon < 0) throw ConfigError("horizon must be >= 0");
  if (particles < 1) throw ConfigError("particles must be >= 1");
  if (total_steps < 1 || eval_interval < 1) throw ConfigError("step counts must be positive");
  if ((agent == "dqn") != (env == "mini_breakout"))
    throw ConfigError("dqn pairs with mini_breakout only");
  if (agent == "dqn" && expansion == "ae") throw ConfigError("dqn has no actor to expand");
  if (agent == "ddpg" && expansion == "retrace")
    throw ConfigError("retrace needs a stochastic behavior policy");
  if (env == "mini_breakout" && model == "learned")
    throw ConfigError("discrete tasks use the oracle model only");
  if (batch_size < 1 || hidden < 1 || model_hidden < 1) throw ConfigError("sizes must be positive");
  if (min_replay > capacity) throw ConfigError("min_replay exceeds capacity");
}

std::string ExperimentConfig::hash() const {
  std::string s = to_json().dump();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double ExperimentConfig::effective_gamma() const {
  if (gamma > 0) return gamma;
  if (env == "pendulum") return 0.95;
  return 0.99;
}

AgentConfig ExperimentConfig::agent_config() const {
  AgentConfig a;
  a.algo = agent;
  a.mode = expansion == "ce"        ? ExpansionMode::Ce
           : expansion == "ae"      ? ExpansionMode::Ae
           : expansion == "retrace" ? ExpansionMode::Retrace
                                    : ExpansionMode::None;
  a.horizon = horizon;
  a.particles = particles;
  a.lr_policy = lr_policy;
  a.lr_critic = lr_critic;
  a.lr_alpha = lr_alpha;
  a.tau = tau;
  a.gamma = effective_gamma();
  a.lambda = lambda;
  a.batch_size = batch_size;
  a.hidden = hidden;
  a.init_log_alpha = init_log_alpha;
  a.clip_gradients = clip_gradients;
  a.grad_clip_norm = grad_clip_norm;
  a.ddpg_noise = ddpg_noise;
  a.eps_start = eps_start;
  a.eps_end = eps_end;
  a.eps_decay_frac = eps_decay_frac;
  a.target_sync = target_sync;
  a.min_replay = static_cast<size_t>(min_replay);
  a.capacity = static_cast<size_t>(capacity);
  return a;
}

// --- run bookkeeping -------------------------------------------------------

namespace {

struct RunCounters {
  long updates = 0;
  long skipped = 0;
  long exploded = 0;
  long critic_updates = 0;
  double critic_ms = 0.0;
  double actor_ms = 0.0;
  double alpha_ms = 0.0;
  double model_ms = 0.0;
};

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  f << j.dump(2) << "\n";
}

void write_status(const std::string& dir, const std::string& state, const RunCounters& c,
                  double total_ms) {
  write_json(dir + "/status.json", json{{"state", state},
                                        {"updates", c.updates},
                                        {"skipped_updates", c.skipped},
                                        {"exploded_updates", c.exploded},
                                        {"critic_updates", c.critic_updates},
                                        {"critic_ms", c.critic_ms},
                                        {"actor_ms", c.actor_ms},
                                        {"alpha_ms", c.alpha_ms},
                                        {"model_train_ms", c.model_ms},
                                        {"total_ms", total_ms}});
}

bool params_finite(const ParameterSet& p) {
  for (const auto& [name, t] : p.tensors)
    if (!t.all_finite()) return false;
  return true;
}

void sample_anchors(const ReplayBuffer& buffer, int n, Rng& rng, Checkpoint& ckpt) {
  auto picks = buffer.sample(n, rng);
  const int s_dim = static_cast<int>(picks[0]->state.size());
  const int a_dim = static_cast<int>(picks[0]->action.size());
  Tensor states(n, s_dim), actions(n, a_dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < s_dim; ++j) states.at(i, j) = picks[i]->state[j];
    for (int j = 0; j < a_dim; ++j) actions.at(i, j) = picks[i]->action[j];
  }
  ckpt.tensors["anchors/states"] = std::move(states);
  ckpt.tensors["anchors/actions"] = std::move(actions);
}

double eval_episode_continuous(const ContinuousEnv& env,
                               const std::function<Vec(const Vec&)>& policy, Rng& rng) {
  Vec s = env.reset(rng);
  double ret = 0.0;
  for (int t = 0;; ++t) {
    auto sr = env.step(s, policy(s), t);
    ret += sr.reward;
    if (sr.terminal || sr.truncated) break;
    s = sr.next;
  }
  return ret;
}

json eval_record_continuous(const ContinuousEnv& env, const std::function<Vec(const Vec&)>& policy,
                            int episodes, Rng& rng) {
  std::vector<double> returns(episodes);
  double mean = 0.0;
  for (int e = 0; e < episodes; ++e) {
    returns[e] = eval_episode_continuous(env, policy, rng);
    mean += returns[e];
  }
  mean /= episodes;
  return json{{"eval_return", mean}, {"eval_returns", returns}};
}

Mat buffer_states(const ReplayBuffer& b) {
  Mat m(b.size(), b.at(0).state.size());
  for (size_t i = 0; i < b.size(); ++i) m.row(i) = b.at(i).state.transpose();
  return m;
}
Mat buffer_actions(const ReplayBuffer& b) {
  Mat m(b.size(), b.at(0).action.size());
  for (size_t i = 0; i < b.size(); ++i) m.row(i) = b.at(i).action.transpose();
  return m;
}
Mat buffer_next_states(const ReplayBuffer& b) {
  Mat m(b.size(), b.at(0).next.size());
  for (size_t i = 0; i < b.size(); ++i) m.row(i) = b.at(i).next.transpose();
  return m;
}

void run_continuous(const ExperimentConfig& cfg, const std::string& dir) {
  auto env = make_continuous_env(cfg.env);
  Rng root(cfg.seed);
  Rng env_rng = root.split(1);
  Rng init_rng = root.split(2);
  Rng train_rng = root.split(3);
  Rng eval_rng = root.split(4);
  Rng model_rng = root.split(5);
  Rng anchor_rng = root.split(6);

  AgentConfig ac = cfg.agent_config();
  const bool is_sac = cfg.agent == "sac";
  std::unique_ptr<SacAgent> sac;
  std::unique_ptr<DdpgAgent> ddpg;
  if (is_sac)
    sac = std::make_unique<SacAgent>(*env, ac, init_rng);
  else
    ddpg = std::make_unique<DdpgAgent>(*env, ac, init_rng);

  const bool uses_model =
      cfg.horizon > 0 && (cfg.expansion == "ce" || cfg.expansion == "ae");
  OracleModel oracle(*env);
  std::unique_ptr<EnsembleModel> learned;
  if (uses_model && cfg.model == "learned")
    learned = std::make_unique<EnsembleModel>(*env, cfg.model_hidden, init_rng);
  const ModelIface* model = learned ? static_cast<const ModelIface*>(learned.get())
                                    : static_cast<const ModelIface*>(&oracle);
  if (uses_model) {
    if (sac) sac->attach_model(model);
    if (ddpg) ddpg->attach_model(model);
  }

  ReplayBuffer buffer(static_cast<size_t>(cfg.capacity));
  const int window = ac.mode == ExpansionMode::Retrace ? cfg.horizon + 1 : 1;
  const long ckpt_interval = std::max<long>(1, cfg.total_steps / cfg.n_checkpoints);
  fs::create_directories(dir + "/checkpoints");

  std::ofstream metrics(dir + "/metrics.jsonl", std::ios::trunc);
  RunCounters counters;
  auto t_start = Clock::now();

  UpdateReport last_critic, last_actor, last_alpha;
  double actor_std_peak = 0.0;
  Vec state = env->reset(env_rng);
  long episode_id = 0;
  int elapsed = 0;

  ModelTrainConfig mtc;
  mtc.max_epochs = cfg.model_max_epochs;
  mtc.patience = cfg.model_patience;
  mtc.holdout_frac = cfg.model_holdout;
  mtc.lr = cfg.model_lr;
  mtc.max_grad_steps = cfg.model_max_grad_steps;
  mtc.batch_size = cfg.batch_size;
  long last_model_train = -1;

  for (long step = 1; step <= cfg.total_steps; ++step) {
    double logp = 0.0;
    Vec action = is_sac ? sac->act(state, true, env_rng, &logp)
                        : ddpg->act(state, true, env_rng);
    auto sr = env->step(state, action, elapsed);

    Transition tr;
    tr.state = state;
    tr.action = action;
    tr.reward = sr.reward;
    tr.next = sr.next;
    tr.terminal = sr.terminal;
    tr.truncated = sr.truncated;
    tr.behavior_log_prob = logp;
    tr.episode_id = episode_id;
    tr.step_index = elapsed;
    buffer.push(std::move(tr));

    if (sr.terminal || sr.truncated) {
      state = env->reset(env_rng);
      ++episode_id;
      elapsed = 0;
    } else {
      state = sr.next;
      ++elapsed;
    }

    if (buffer.ready(static_cast<size_t>(cfg.min_replay))) {
      if (learned && (last_model_train < 0 ||
                      step - last_model_train >= cfg.model_retrain_interval)) {
        auto t0 = Clock::now();
        learned->train(buffer_states(buffer), buffer_actions(buffer),
                       buffer_next_states(buffer), mtc, model_rng);
        counters.model_ms += ms_since(t0);
        last_model_train = step;
      }

      Batch batch = make_batch(buffer, cfg.batch_size, window, train_rng);
      auto t0 = Clock::now();
      last_critic = is_sac ? sac->critic_update(batch, train_rng)
                           : ddpg->critic_update(batch, train_rng);
      counters.critic_ms += ms_since(t0);
      ++counters.critic_updates;

      t0 = Clock::now();
      last_actor = is_sac ? sac->actor_update(batch, train_rng)
                          : ddpg->actor_update(batch, train_rng);
      counters.actor_ms += ms_since(t0);

      if (is_sac) {
        t0 = Clock::now();
        last_alpha = sac->alpha_update(batch, train_rng);
        counters.alpha_ms += ms_since(t0);
      }
      ++counters.updates;
      if (last_critic.skipped || last_actor.skipped) ++counters.skipped;
      if (last_actor.exploded) ++counters.exploded;
      if (std::isfinite(last_actor.grads.std))
        actor_std_peak = std::max(actor_std_peak, last_actor.grads.std);
    }

    if (step % cfg.eval_interval == 0) {
      auto policy_fn = [&](const Vec& s) {
        return is_sac ? sac->act(s, false, eval_rng) : ddpg->act(s, false, eval_rng);
      };
      json rec = eval_record_continuous(*env, policy_fn, cfg.eval_episodes, eval_rng);
      rec["step"] = step;
      rec["critic_loss"] = last_critic.critic_loss;
      rec["actor_loss"] = last_actor.actor_loss;
      rec["alpha"] = is_sac ? last_alpha.alpha : 0.0;
      rec["critic_grad_mean"] = last_critic.grads.mean;
      rec["critic_grad_std"] = last_critic.grads.std;
      rec["actor_grad_mean"] = last_actor.grads.mean;
      rec["actor_grad_std"] = last_actor.grads.std;
      rec["actor_grad_std_peak"] = actor_std_peak;  // max since the last eval
      actor_std_peak = 0.0;
      rec["updates"] = counters.updates;
      rec["skipped_updates"] = counters.skipped;
      rec["exploded_updates"] = counters.exploded;
      metrics << rec.dump() << "\n";
      metrics.flush();
    }

    if (step % ckpt_interval == 0 && buffer.size() > 0) {
      Checkpoint ck;
      ck.config_hash = cfg.hash();
      ck.env_steps = step;
      ck.meta["env_rng"] = env_rng.serialize();
      ck.meta["train_rng"] = train_rng.serialize();
      ck.meta["eval_rng"] = eval_rng.serialize();
      if (is_sac) {
        pack_params(ck, "policy", sac->policy());
        pack_params(ck, "q1", sac->critic(0));
        pack_params(ck, "q2", sac->critic(1));
        pack_params(ck, "tq1", sac->target_critic(0));
        pack_params(ck, "tq2", sac->target_critic(1));
        ck.tensors["alpha/log_alpha"] = sac->log_alpha();
      } else {
        pack_params(ck, "policy", ddpg->policy());
        pack_params(ck, "tpolicy", ddpg->target_policy());
        pack_params(ck, "q1", ddpg->critic());
        pack_params(ck, "tq1", ddpg->target_critic());
      }
      int n_anchor = std::min<int>(cfg.checkpoint_anchors, static_cast<int>(buffer.size()));
      sample_anchors(buffer, n_anchor, anchor_rng, ck);
      save_checkpoint(dir + "/checkpoints/step_" + std::to_string(step) + ".ckpt", ck);
    }
  }

  bool healthy = is_sac ? (params_finite(sac->policy()) && params_finite(sac->critic(0)) &&
                           params_finite(sac->critic(1)) && std::isfinite(sac->alpha()))
                        : (params_finite(ddpg->policy()) && params_finite(ddpg->critic()));
  bool diverged = !healthy || (counters.updates > 0 &&
                               counters.exploded > counters.updates / 4);
  write_status(dir, diverged ? "diverged" : "done", counters, ms_since(t_start));
}

void run_discrete(const ExperimentConfig& cfg, const std::string& dir) {
  MiniBreakout env;
  Rng root(cfg.seed);
  Rng env_rng = root.split(1);
  Rng init_rng = root.split(2);
  Rng train_rng = root.split(3);
  Rng eval_rng = root.split(4);

  AgentConfig ac = cfg.agent_config();
  DqnAgent agent(env, ac, init_rng);
  ReplayBuffer buffer(static_cast<size_t>(cfg.capacity));
  const int window = ac.mode == ExpansionMode::Retrace ? cfg.horizon + 1 : 1;
  const long ckpt_interval = std::max<long>(1, cfg.total_steps / cfg.n_checkpoints);
  fs::create_directories(dir + "/checkpoints");

  std::ofstream metrics(dir + "/metrics.jsonl", std::ios::trunc);
  RunCounters counters;
  auto t_start = Clock::now();
  UpdateReport last;

  BreakoutState game = env.reset(env_rng);
  long episode_id = 0;

  for (long step = 1; step <= cfg.total_steps; ++step) {
    double progress = static_cast<double>(step - 1) / cfg.total_steps;
    Vec obs = game.observation();
    int a = agent.act(obs, true, progress, env_rng);
    auto sr = env.step(game, a);

    double eps = agent.epsilon(progress);
    Mat q = forward_mlp_eval(agent.network(), obs.transpose());
    int best = 0;
    q.row(0).maxCoeff(&best);
    double p_a = eps / env.spec().num_actions + (a == best ? 1.0 - eps : 0.0);

    Transition tr;
    tr.state = obs;
    tr.action = Vec::Constant(1, a);
    tr.reward = sr.reward;
    tr.next = sr.next.observation();
    tr.terminal = sr.terminal;
    tr.truncated = sr.truncated;
    tr.behavior_log_prob = std::log(p_a);
    tr.episode_id = episode_id;
    tr.step_index = game.elapsed;
    tr.game = std::make_shared<BreakoutState>(game);
    buffer.push(std::move(tr));

    if (sr.terminal || sr.truncated) {
      game = env.reset(env_rng);
      ++episode_id;
    } else {
      game = sr.next;
    }

    if (buffer.ready(static_cast<size_t>(cfg.min_replay))) {
      Batch batch = make_batch(buffer, cfg.batch_size, window, train_rng);
      auto t0 = Clock::now();
      last = agent.update(batch, train_rng);
      counters.critic_ms += ms_since(t0);
      ++counters.critic_updates;
      ++counters.updates;
      if (last.skipped) ++counters.skipped;
    }

    if (step % cfg.eval_interval == 0) {
      std::vector<double> returns(cfg.eval_episodes);
      double mean = 0.0;
      for (int e = 0; e < cfg.eval_episodes; ++e) {
        BreakoutState s = env.reset(eval_rng);
        double ret = 0.0;
        for (;;) {
          int act = agent.act(s.observation(), false, 1.0, eval_rng);
          auto r = env.step(s, act);
          ret += r.reward;
          if (r.terminal || r.truncated) break;
          s = r.next;
        }
        returns[e] = ret;
        mean += ret;
      }
      mean /= cfg.eval_episodes;
      json rec{{"step", step},
               {"eval_return", mean},
               {"eval_returns", returns},
               {"critic_loss", last.critic_loss},
               {"critic_grad_mean", last.grads.mean},
               {"critic_grad_std", last.grads.std},
               {"updates", counters.updates},
               {"skipped_updates", counters.skipped},
               {"exploded_updates", counters.exploded}};
      metrics << rec.dump() << "\n";
      metrics.flush();
    }

    if (step % ckpt_interval == 0 && buffer.size() > 0) {
      Checkpoint ck;
      ck.config_hash = cfg.hash();
      ck.env_steps = step;
      ck.meta["env_rng"] = env_rng.serialize();
      ck.meta["train_rng"] = train_rng.serialize();
      pack_params(ck, "q1", agent.network());
      pack_params(ck, "tq1", agent.target_network());
      save_checkpoint(dir + "/checkpoints/step_" + std::to_string(step) + ".ckpt", ck);
    }
  }

  bool diverged = !params_finite(agent.network());
  write_status(dir, diverged ? "diverged" : "done", counters, ms_since(t_start));
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  write_json(out_dir + "/config.json", cfg.to_json());
  {
    RunCounters zero;
    write_status(out_dir, "running", zero, 0.0);
  }
  if (cfg.env == "mini_breakout")
    run_discrete(cfg, out_dir);
  else
    run_continuous(cfg, out_dir);
}

// --- aggregation -----------------------------------------------------------

SeriesSet load_returns(const std::vector<std::string>& run_dirs) {
  SeriesSet out;
  for (const auto& dir : run_dirs) {
    std::ifstream f(dir + "/metrics.jsonl");
    if (!f) throw DataError("missing metrics.jsonl in " + dir);
    std::vector<long> steps;
    std::vector<double> vals;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded()) throw DataError("malformed metrics line in " + dir);
      if (!rec.contains("eval_return")) continue;
      steps.push_back(rec.at("step").get<long>());
      vals.push_back(rec.at("eval_return").get<double>());
    }
    if (steps.empty()) throw DataError("no evaluation records in " + dir);
    if (out.steps.empty())
      out.steps = steps;
    else if (steps != out.steps)
      throw DataError("evaluation grid mismatch in " + dir);
    out.values.push_back(std::move(vals));
  }
  return out;
}

double iqm(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("iqm of empty set");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const double lo = 0.25 * n, hi = 0.75 * n;
  double acc = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    double w = std::max(0.0, std::min(static_cast<double>(i + 1), hi) -
                                 std::max(static_cast<double>(i), lo));
    acc += w * values[i];
  }
  return acc / (0.5 * n);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(values.begin(), values.end());
  double pos = p / 100.0 * (values.size() - 1);
  size_t i = static_cast<size_t>(pos);
  if (i + 1 >= values.size()) return values.back();
  double frac = pos - i;
  return values[i] * (1.0 - frac) + values[i + 1] * frac;
}

Normalization baseline_normalization(const SeriesSet& baseline) {
  if (baseline.values.empty()) throw DataError("baseline normalization needs runs");
  Normalization norm;
  norm.lo = std::numeric_limits<double>::infinity();
  norm.hi = -std::numeric_limits<double>::infinity();
  for (size_t t = 0; t < baseline.steps.size(); ++t) {
    std::vector<double> point;
    for (const auto& seed : baseline.values) point.push_back(seed[t]);
    double v = iqm(point);
    norm.lo = std::min(norm.lo, v);
    norm.hi = std::max(norm.hi, v);
  }
  if (!(norm.hi > norm.lo)) norm.hi = norm.lo + 1.0;  // constant baseline guard
  return norm;
}

AggregateCurve aggregate(const SeriesSet& runs, const Normalization& norm,
                         int bootstrap_resamples, uint64_t bootstrap_seed) {
  AggregateCurve c;
  c.steps = runs.steps;
  c.norm = norm;
  Rng rng(bootstrap_seed);
  const int n = static_cast<int>(runs.values.size());
  for (size_t t = 0; t < runs.steps.size(); ++t) {
    std::vector<double> point(n);
    for (int s = 0; s < n; ++s) point[s] = runs.values[s][t];
    std::sort(point.begin(), point.end());  // seed-order invariance
    // normalize once, after aggregation: the affine map commutes with
    // sorted-order statistics, and a single application keeps the
    // baseline's own maximum at exactly 1.0
    c.iqm.push_back(norm.apply(iqm(point)));
    c.ipr_lo.push_back(norm.apply(percentile(point, 5.0)));
    c.ipr_hi.push_back(norm.apply(percentile(point, 95.0)));
    std::vector<double> boot(bootstrap_resamples);
    std::vector<double> resample(n);
    for (int r = 0; r < bootstrap_resamples; ++r) {
      for (int s = 0; s < n; ++s) resample[s] = point[rng.uniform_int(n)];
      boot[r] = iqm(resample);
    }
    c.ci_lo.push_back(norm.apply(percentile(boot, 2.5)));
    c.ci_hi.push_back(norm.apply(percentile(boot, 97.5)));
  }
  return c;
}

LearningSpeed learning_speed(const AggregateCurve& curve, const AggregateCurve& baseline) {
  double target = *std::max_element(baseline.iqm.begin(), baseline.iqm.end());
  long baseline_cross = -1;
  for (size_t t = 0; t < baseline.steps.size(); ++t)
    if (baseline.iqm[t] >= target) {
      baseline_cross = baseline.steps[t];
      break;
    }
  LearningSpeed ls;
  for (size_t t = 0; t < curve.steps.size(); ++t)
    if (curve.iqm[t] >= target) {
      ls.reached = true;
      ls.cross_step = curve.steps[t];
      ls.percent = 100.0 * static_cast<double>(ls.cross_step) / baseline_cross;
      break;
    }
  return ls;
}

FinalPerformance final_performance(const AggregateCurve& curve) {
  FinalPerformance fp;
  size_t best = 0;
  for (size_t t = 1; t < curve.iqm.size(); ++t)
    if (curve.iqm[t] > curve.iqm[best]) best = t;
  fp.iqm = curve.iqm[best];
  fp.ci_lo = curve.ci_lo[best];
  fp.ci_hi = curve.ci_hi[best];
  fp.step = curve.steps[best];
  return fp;
}

// --- plotting --------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

void emit_plot(const std::string& path, const std::string& title,
               const std::vector<PlotSeries>& series, double clip_hi) {
  if (series.empty()) {
    std::fprintf(stderr, "emit_plot: no series, skipping %s\n", path.c_str());
    return;
  }
  auto clip = [&](double v) { return clip_hi > 0.0 ? std::min(v, clip_hi) : v; };

  double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      x_min = std::min(x_min, v);
      x_max = std::max(x_max, v);
    }
    for (double v : s.y) {
      y_min = std::min(y_min, clip(v));
      y_max = std::max(y_max, clip(v));
    }
    for (double v : s.band_lo) y_min = std::min(y_min, clip(v));
    for (double v : s.band_hi) y_max = std::max(y_max, clip(v));
  }
  if (x_max <= x_min) x_max = x_min + 1;
  if (y_max <= y_min) y_max = y_min + 1;
  double xm = 0.05 * (x_max - x_min), ym = 0.05 * (y_max - y_min);
  x_min -= xm;
  x_max += xm;
  y_min -= ym;
  y_max += ym;

  const double W = 640, H = 420, L = 70, R = 20, T = 36, B = 48;
  auto px = [&](double x) { return L + (x - x_min) / (x_max - x_min) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y_min) / (y_max - y_min) * (H - T - B); };

  std::ofstream f(path, std::ios::trunc);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
    << "</text>\n";

  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % 6];
    if (!s.band_lo.empty() && s.band_lo.size() == s.x.size()) {
      f << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i)
        f << fmt(px(s.x[i])) << "," << fmt(py(clip(s.band_hi[i]))) << " ";
      for (size_t i = s.x.size(); i-- > 0;)
        f << fmt(px(s.x[i])) << "," << fmt(py(clip(s.band_lo[i]))) << " ";
      f << "\"/>\n";
    }
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i)
      f << fmt(px(s.x[i])) << "," << fmt(py(clip(s.y[i]))) << " ";
    f << "\"/>\n";
    f << "<rect x=\"" << L + 8 << "\" y=\"" << T + 4 + 16 * k << "\" width=\"10\" height=\"10\" fill=\""
      << color << "\"/>\n";
    f << "<text x=\"" << L + 22 << "\" y=\"" << T + 13 + 16 * k << "\" font-size=\"11\">" << s.label
      << "</text>\n";
  }

  // axes with five ticks each
  f << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double x = x_min + (x_max - x_min) * i / 4.0;
    double y = y_min + (y_max - y_min) * i / 4.0;
    f << "<text x=\"" << fmt(px(x)) << "\" y=\"" << H - B + 16
      << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(x) << "</text>\n";
    f << "<text x=\"" << L - 6 << "\" y=\"" << fmt(py(y) + 3)
      << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(y) << "</text>\n";
  }
  f << "</svg>\n";
}

void emit_curve_plot(const std::string& path, const std::string& title,
                     const std::map<std::string, AggregateCurve>& curves) {
  std::vector<PlotSeries> series;
  for (const auto& [label, c] : curves) {
    PlotSeries s;
    s.label = label;
    s.x.assign(c.steps.begin(), c.steps.end());
    s.y = c.iqm;
    s.band_lo = c.ipr_lo;
    s.band_hi = c.ipr_hi;
    series.push_back(std::move(s));
  }
  emit_plot(path, title, series);
}

// --- target study ----------------------------------------------------------

void run_target_study(const std::string& run_dir, const std::vector<int>& horizons, int particles,
                      const std::string& out_file) {
  std::ifstream cf(run_dir + "/config.json");
  if (!cf) throw DataError("missing config.json in " + run_dir);
  json cj = json::parse(cf, nullptr, false);
  if (cj.is_discarded()) throw DataError("malformed config.json in " + run_dir);
  ExperimentConfig cfg = ExperimentConfig::from_json(cj);
  if (cfg.agent != "sac") throw DataError("target study expects a SAC run");

  auto env = make_continuous_env(cfg.env);
  OracleModel model(*env);
  Rng shape_rng(0);
  SacAgent agent(*env, cfg.agent_config(), shape_rng);

  std::set<long> steps;
  for (const auto& e : fs::directory_iterator(run_dir + "/checkpoints")) {
    std::string name = e.path().filename().string();
    if (name.rfind("step_", 0) == 0 && name.size() > 10)
      steps.insert(std::stol(name.substr(5, name.size() - 10)));
  }
  if (steps.empty()) throw DataError("no checkpoints in " + run_dir);

  std::ofstream out(out_file, std::ios::trunc);
  for (long step : steps) {
    Checkpoint ck = load_checkpoint(
        run_dir + "/checkpoints/step_" + std::to_string(step) + ".ckpt", cfg.hash());
    unpack_params(ck, "policy", agent.policy());
    unpack_params(ck, "q1", agent.critic(0));
    unpack_params(ck, "q2", agent.critic(1));
    const Tensor& as = ck.tensors.at("anchors/states");
    const Tensor& aa = ck.tensors.at("anchors/actions");
    Mat anchor_s = as.map();
    Mat anchor_a = aa.map();

    SquashedPolicyView pol;
    pol.net = &agent.policy();
    pol.bound = env->spec().action_bound;
    MinCriticView crit;
    crit.a = &agent.critic(0);
    crit.b = &agent.critic(1);

    TargetStudyConfig sc;
    sc.horizons = horizons;
    sc.particles = particles;
    sc.gamma = cfg.effective_gamma();
    sc.alpha = std::exp(ck.tensors.at("alpha/log_alpha").data[0]);

    Rng rng(cfg.seed ^ (static_cast<uint64_t>(step) * 0x9E3779B97F4A7C15ull));
    auto rows = target_distribution_study(anchor_s, anchor_a, sc, crit, pol, model, rng);
    for (auto& row : rows) {
      row.checkpoint_step = step;
      out << json{{"checkpoint_step", row.checkpoint_step},
                  {"H", row.horizon},
                  {"dw_mean", row.dw_mean},
                  {"target_mean", row.target_mean},
                  {"target_var", row.target_var},
                  {"n_anchors", row.n_anchors}}
                 .dump()
          << "\n";
    }
  }
}

}  // namespace vex
