#pragma once

#include <deque>
#include <memory>
#include <vector>

#include "vex/env.hpp"
#include "vex/rng.hpp"
#include "vex/tensor.hpp"

namespace vex {

struct Transition {
  Vec state;
  Vec action;  // discrete tasks store the action index in action[0]
  double reward = 0.0;
  Vec next;
  bool terminal = false;
  bool truncated = false;
  double behavior_log_prob = 0.0;  // log mu(a|s) at collection time
  long episode_id = 0;
  int step_index = 0;
  std::shared_ptr<const BreakoutState> game;  // anchor for discrete model rollouts
};

/// Chronological ring buffer with episode-aware window sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {}

  void push(Transition t);
  size_t size() const { return data_.size(); }
  bool ready(size_t min_fill) const { return data_.size() >= min_fill; }
  const Transition& at(size_t i) const { return data_[i]; }

  /// Uniform anchors; each window extends forward within its episode for
  /// up to `window` transitions, shrinking at episode ends.
  std::vector<std::vector<const Transition*>> sample_windows(int count, int window,
                                                             Rng& rng) const;
  std::vector<const Transition*> sample(int count, Rng& rng) const;

 private:
  size_t capacity_;
  std::deque<Transition> data_;
};

}  // namespace vex
