#include "vex/replay.hpp"

#include <stdexcept>

namespace vex {

void ReplayBuffer::push(Transition t) {
  if (data_.size() == capacity_) data_.pop_front();
  data_.push_back(std::move(t));
}

std::vector<std::vector<const Transition*>> ReplayBuffer::sample_windows(int count, int window,
                                                                         Rng& rng) const {
  if (data_.empty()) throw std::logic_error("sampling from empty replay buffer");
  std::vector<std::vector<const Transition*>> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(data_.size())));
    std::vector<const Transition*> w;
    w.push_back(&data_[i]);
    for (int j = 1; j < window; ++j) {
      size_t n = i + j;
      if (n >= data_.size()) break;
      const Transition& prev = data_[n - 1];
      const Transition& cand = data_[n];
      if (cand.episode_id != prev.episode_id || cand.step_index != prev.step_index + 1) break;
      w.push_back(&cand);
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<const Transition*> ReplayBuffer::sample(int count, Rng& rng) const {
  if (data_.empty()) throw std::logic_error("sampling from empty replay buffer");
  std::vector<const Transition*> out(count);
  for (int k = 0; k < count; ++k)
    out[k] = &data_[static_cast<size_t>(rng.uniform_int(static_cast<int>(data_.size())))];
  return out;
}

}  // namespace vex
