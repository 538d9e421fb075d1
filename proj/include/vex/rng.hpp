#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace vex {

/// Deterministic random stream. Each independent consumer (environment,
/// training, evaluation, particles) gets its own instance.
class Rng {
 public:
  Rng() : gen_(0) {}
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  int uniform_int(int n) { return std::uniform_int_distribution<int>(0, n - 1)(gen_); }

  /// Derive an independent stream; deterministic in (state, salt).
  Rng split(uint64_t salt) {
    uint64_t s = gen_();
    return Rng(s ^ (salt * 0x9E3779B97F4A7C15ull));
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace vex
