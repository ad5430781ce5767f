#pragma once

#include <cstdint>
#include <random>

#include <json.hpp>

#include "objnav/nets.hpp"
#include "objnav/params.hpp"

namespace objnav {

struct SacConfig {
  double gamma = 0.99;
  double tau = 0.005;
  int batch_size = 64;
  int crop_len = 20;
  double target_entropy = -2.0;
  double init_log_alpha = 0.0;
  AdamConfig adam;
};

void to_json(nlohmann::json& j, const SacConfig& cfg);
void from_json(const nlohmann::json& j, SacConfig& cfg);

/// Crops of `steps` transitions for `batch` sequences, time-major (row = t * batch + b).
/// Observations carry one extra step: obs row block t+1 is the observation after action t.
template <class T>
struct Batch {
  int batch = 0;
  int steps = 0;
  ObsBatch<T> obs;       // (steps + 1) * batch rows
  ad::Tensor<T> action;  // [steps*batch, A]
  ad::Tensor<T> reward;  // [steps*batch, 1]
  ad::Tensor<T> done;    // [steps*batch, 1]
  ad::Tensor<T> mask;    // [steps*batch, 1]

  template <class U>
  Batch<U> cast() const {
    return {batch, steps, obs.template cast<U>(), action.template cast<U>(), reward.template cast<U>(),
            done.template cast<U>(), mask.template cast<U>()};
  }
  /// Checks shapes and the mask/done structure; throws ShapeError / InvariantError.
  void validate(int action_dim) const;
};

template <class T>
struct SacState {
  NetConfig net;
  SacConfig cfg;
  ParamSet<T> policy;
  ParamSet<T> critic;
  ParamSet<T> critic_target;
  ParamSet<T> alpha;  // single entry "log_alpha", shape [1]
  AdamState<T> policy_opt, critic_opt, alpha_opt;
  int64_t updates = 0;

  T log_alpha() const { return alpha[0].value[0]; }
  template <class U>
  SacState<U> cast() const;
};

template <class T>
SacState<T> make_sac_state(const NetConfig& net, const SacConfig& cfg, uint64_t seed);

template <class T>
struct LossGrad {
  T value = 0;
  std::vector<ad::Tensor<T>> grads;
};

template <class T>
struct ActorLoss : LossGrad<T> {
  ad::Tensor<T> log_prob;  // [steps*batch, 1]
};

/// Soft Bellman targets y [steps*batch, 1]; `noise` [steps*batch, A] drives a' ~ pi(.|o_{t+1}).
template <class T>
ad::Tensor<T> critic_target(const ParamSet<T>& target_critic, const ParamSet<T>& policy, const NetConfig& net,
                            const Batch<T>& batch, T alpha, T gamma, const ad::Tensor<T>& noise);

/// Masked mean of ((Q1-y)^2 + (Q2-y)^2) / 2 with gradients for `critic`.
template <class T>
LossGrad<T> critic_loss(const ParamSet<T>& critic, const NetConfig& net, const Batch<T>& batch,
                        const ad::Tensor<T>& y);

/// Masked mean of (alpha * log pi - min(Q1, Q2)) with gradients for `policy`; critics frozen.
template <class T>
ActorLoss<T> actor_loss(const ParamSet<T>& policy, const ParamSet<T>& critic, const NetConfig& net,
                        const Batch<T>& batch, T alpha, const ad::Tensor<T>& noise);

/// Masked mean of -exp(log_alpha) * (log pi + target_entropy); log pi held constant.
template <class T>
LossGrad<T> alpha_loss(T log_alpha, const ad::Tensor<T>& log_prob, const ad::Tensor<T>& mask, T target_entropy);

struct TrainMetrics {
  double critic_loss = 0;
  double actor_loss = 0;
  double alpha = 0;
  double entropy = 0;
};

/// Critic, actor and temperature Adam steps in that order, then the Polyak target update.
template <class T>
TrainMetrics train_step(SacState<T>& st, const Batch<T>& batch, uint64_t noise_seed);

/// Standard-normal noise tensor drawn from `rng`.
template <class T>
ad::Tensor<T> normal_noise(ad::Shape shape, std::mt19937_64& rng);

}  // namespace objnav
