#pragma once

#include <array>
#include <cstdint>

#include "objnav/nets.hpp"
#include "objnav/sac.hpp"

namespace objnav {

/// One-step continuous bandit: a fixed observation, reward -|a - optimum|^2, every step terminal.
struct BanditConfig {
  std::array<double, 2> optimum{0.5, -0.3};
  int max_steps = 2000;
  int eval_every = 25;
  double tolerance = 0.05;
  int batch = 64;
  NetConfig net;
  SacConfig sac;
};

struct BanditResult {
  bool converged = false;
  int steps = 0;  // train steps taken when convergence was first seen (max_steps otherwise)
  std::array<double, 2> action{};  // deterministic action at that point
  double distance = 0;
};

/// Trains with fresh batches drawn half uniformly and half from the current policy.
BanditResult run_bandit(const BanditConfig& cfg, uint64_t seed);

}  // namespace objnav
