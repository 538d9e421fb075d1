#include "vex/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "json.hpp"

namespace vex {

using json = nlohmann::json;

double wasserstein_1d(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("wasserstein_1d needs equal particle counts");
  if (p.empty()) throw std::invalid_argument("wasserstein_1d on empty samples");
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return acc / p.size();
}

std::vector<std::vector<double>> mc_return_particles(const Mat& states, const Mat& actions,
                                                     const TargetStudyConfig& cfg,
                                                     const PolicyIface& policy,
                                                     const ModelIface& model, Rng& rng) {
  const int b = static_cast<int>(states.rows());
  std::vector<std::vector<double>> out(b);
  for (int i = 0; i < b; ++i) out[i].reserve(cfg.particles);

  for (int p = 0; p < cfg.particles; ++p) {
    Vec y = Vec::Zero(b);
    Vec alive = Vec::Ones(b);
    Mat cur_states = states;
    Mat cur_actions = actions;
    Vec log_probs = Vec::Zero(b);
    double disc = 1.0;
    for (int t = 0; t < cfg.mc_horizon; ++t) {
      Mat next;
      Vec reward;
      std::vector<uint8_t> terminal;
      model.predict(cur_states, cur_actions, rng, next, reward, terminal);
      if (t == 0)
        y += reward;
      else
        y.array() += disc * alive.array() * (reward - cfg.alpha * log_probs).array();
      for (int i = 0; i < b; ++i)
        if (terminal[i]) alive[i] = 0.0;
      cur_states = std::move(next);
      disc *= cfg.gamma;
      if (t < cfg.mc_horizon - 1) policy.sample(cur_states, rng, cur_actions, log_probs);
    }
    for (int i = 0; i < b; ++i) out[i].push_back(y[i]);
  }
  return out;
}

std::vector<TargetStudyRow> target_distribution_study(const Mat& anchor_states,
                                                      const Mat& anchor_actions,
                                                      const TargetStudyConfig& cfg,
                                                      const CriticIface& critic,
                                                      const PolicyIface& policy,
                                                      const ModelIface& model, Rng& rng) {
  const int b = static_cast<int>(anchor_states.rows());
  auto mc = mc_return_particles(anchor_states, anchor_actions, cfg, policy, model, rng);
  for (auto& v : mc) std::sort(v.begin(), v.end());

  std::vector<TargetStudyRow> rows;
  for (int h : cfg.horizons) {
    ExpansionConfig ec;
    ec.horizon = h;
    ec.particles = cfg.particles;
    ec.gamma = cfg.gamma;
    ec.alpha = cfg.alpha;
    auto parts = q_h_target(anchor_states, anchor_actions, ec, critic, policy, model, rng);

    TargetStudyRow row;
    row.horizon = h;
    row.n_anchors = b;
    for (int i = 0; i < b; ++i) {
      row.target_mean += parts[i].mean();
      row.target_var += parts[i].variance();
      std::vector<double> sorted = parts[i].values;
      std::sort(sorted.begin(), sorted.end());
      row.dw_mean += wasserstein_1d(sorted, mc[i]);
    }
    row.target_mean /= b;
    row.target_var /= b;
    row.dw_mean /= b;
    rows.push_back(row);
  }
  return rows;
}

// --- checkpointing ---------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'V', 'E', 'X', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json header;
  header["version"] = 1;
  header["config_hash"] = ckpt.config_hash;
  header["env_steps"] = ckpt.env_steps;
  header["meta"] = ckpt.meta;
  json tensors = json::array();
  for (const auto& [name, t] : ckpt.tensors)
    tensors.push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}});
  header["tensors"] = tensors;

  std::string h = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  uint64_t hlen = h.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : ckpt.tensors)
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IntegrityError("cannot open checkpoint: " + path);
  f.seekg(0, std::ios::end);
  const uint64_t file_size = static_cast<uint64_t>(f.tellg());
  f.seekg(0);

  char magic[8];
  uint64_t hlen = 0;
  if (file_size < 16 || !f.read(magic, 8) || !std::equal(magic, magic + 8, kMagic))
    throw IntegrityError("bad checkpoint magic at offset 0: " + path);
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (16 + hlen > file_size)
    throw IntegrityError("truncated checkpoint header at offset 16: " + path);
  std::string h(hlen, '\0');
  f.read(h.data(), static_cast<std::streamsize>(hlen));

  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt checkpoint header at offset 16: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  ckpt.config_hash = header.at("config_hash").get<std::string>();
  ckpt.env_steps = header.at("env_steps").get<long>();
  ckpt.meta = header.at("meta").get<std::map<std::string, std::string>>();
  if (!expected_hash.empty() && ckpt.config_hash != expected_hash)
    throw std::runtime_error("checkpoint config hash mismatch: have " + ckpt.config_hash +
                             ", expected " + expected_hash);

  uint64_t payload = 0;
  for (const auto& t : header.at("tensors"))
    payload += static_cast<uint64_t>(t.at("rows").get<int>()) * t.at("cols").get<int>() * 8;
  if (file_size != 16 + hlen + payload)
    throw IntegrityError("truncated checkpoint payload at offset " + std::to_string(16 + hlen) +
                         ": have " + std::to_string(file_size) + " bytes, need " +
                         std::to_string(16 + hlen + payload));

  for (const auto& tj : header.at("tensors")) {
    Tensor t(tj.at("rows").get<int>(), tj.at("cols").get<int>());
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw IntegrityError("short read in checkpoint payload: " + path);
    ckpt.tensors[tj.at("name").get<std::string>()] = std::move(t);
  }
  return ckpt;
}

void pack_params(Checkpoint& ckpt, const std::string& prefix, const ParameterSet& params) {
  for (const auto& [name, t] : params.tensors) ckpt.tensors[prefix + "/" + name] = t;
}

void unpack_params(const Checkpoint& ckpt, const std::string& prefix, ParameterSet& params) {
  for (auto& [name, t] : params.tensors) {
    const Tensor& src = ckpt.tensors.at(prefix + "/" + name);
    if (!src.same_shape(t)) throw IntegrityError("checkpoint shape mismatch: " + prefix + "/" + name);
    t = src;
  }
}

void pack_adam(Checkpoint& ckpt, const std::string& prefix, const AdamState& opt) {
  ckpt.tensors[prefix + "/step"] = Tensor::scalar(static_cast<double>(opt.step));
  for (const auto& [name, t] : opt.m) ckpt.tensors[prefix + "/m/" + name] = t;
  for (const auto& [name, t] : opt.v) ckpt.tensors[prefix + "/v/" + name] = t;
}

void unpack_adam(const Checkpoint& ckpt, const std::string& prefix, AdamState& opt) {
  opt.step = static_cast<long>(ckpt.tensors.at(prefix + "/step").data[0]);
  for (auto& [name, t] : opt.m) t = ckpt.tensors.at(prefix + "/m/" + name);
  for (auto& [name, t] : opt.v) t = ckpt.tensors.at(prefix + "/v/" + name);
}

}  // namespace vex
