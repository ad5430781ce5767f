#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "objnav/autodiff.hpp"
#include "objnav/nets.hpp"

namespace objnav::gradcheck {

inline constexpr double kStep = 1e-5;

/// |a - n| / max(|a|, |n|, floor)
double rel_error(double analytic, double numeric, double floor = 1e-2);

ad::Tensor<double> random_tensor(ad::Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1);

struct FdResult {
  double max_rel_error = 0;
  size_t checked = 0;
  /// Coordinates whose stencil crossed a relu/clamp/min branch (not differentiable at scale h).
  size_t skipped = 0;
  void merge(const FdResult& o);
};

using Builder = std::function<ad::Var(ad::Tape<double>&, const std::vector<ad::Var>&)>;

/// Gradient of a random-weighted sum of `build`'s output against central differences over every
/// input entry.
FdResult check_op(const Builder& build, std::vector<ad::Tensor<double>> inputs, std::mt19937_64& rng,
                  double h = kStep);

/// Central differences of `f` over `per_tensor` random entries of each tensor (all when 0).
/// `f` must read the current contents of `params`.
FdResult check_fn(const std::vector<ad::Tensor<double>*>& params, const std::vector<ad::Tensor<double>>& analytic,
                  const std::function<double()>& f, std::mt19937_64& rng, size_t per_tensor = 0,
                  double h = kStep);

struct Report {
  std::string name;
  int instances = 0;
  FdResult fd;
};

/// Small network shape that keeps finite differencing cheap.
NetConfig tiny_net();

/// Random observation rows satisfying the observation invariants.
ObsBatch<double> random_obs(int rows, const NetConfig& cfg, std::mt19937_64& rng);

std::vector<Report> check_primitives(uint64_t seed, int instances);
std::vector<Report> check_networks(uint64_t seed, int instances, size_t per_tensor = 3);
std::vector<Report> check_losses(uint64_t seed, int instances, size_t per_tensor = 3);

}  // namespace objnav::gradcheck
