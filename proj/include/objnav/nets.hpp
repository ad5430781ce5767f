#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "objnav/autodiff.hpp"
#include "objnav/params.hpp"
#include "objnav/sim.hpp"

namespace objnav {

struct NetConfig {
  int embed_dim = 64;
  int lstm_dim = 128;
  int head_hidden = 64;
  int lidar_rays = 222;
  double lidar_max_range = 5.0;
  int det_bins = 64;
  std::vector<int> conv_channels{8, 16, 16};
  int conv_kernel = 5;
  int conv_stride = 2;
  int action_dim = 2;

  /// Flattened length of the lidar conv stack output.
  int conv_output_len() const;
};

void to_json(nlohmann::json& j, const NetConfig& cfg);
void from_json(const nlohmann::json& j, NetConfig& cfg);

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kTanhEps = 1e-6;

/// Observation rows as network inputs. Row r of every field belongs to the same observation.
template <class T>
struct ObsBatch {
  int rows = 0;
  ad::Tensor<T> lidar;        // [rows, rays, 1], ranges / max_range
  ad::Tensor<T> det;          // [rows, bins]
  ad::Tensor<T> goal;         // [rows, 9]
  ad::Tensor<T> prev_action;  // [rows, 2]
  ad::Tensor<T> collision;    // [rows, 1]

  /// Rows [begin, end).
  ObsBatch slice_rows(int begin, int end) const;
  template <class U>
  ObsBatch<U> cast() const {
    return {rows, lidar.template cast<U>(), det.template cast<U>(), goal.template cast<U>(),
            prev_action.template cast<U>(), collision.template cast<U>()};
  }
};

template <class T>
ObsBatch<T> make_obs_batch(std::span<const Observation* const> obs, const NetConfig& cfg);

/// Binds entries of a ParamSet onto a tape, as trainable leaves or frozen constants.
template <class T>
class Binder {
 public:
  Binder(ad::Tape<T>& tape, const ParamSet<T>& params, bool trainable)
      : tape_(tape), params_(params), trainable_(trainable), vars_(params.size()) {}

  ad::Tape<T>& tape() { return tape_; }
  ad::Var operator()(const std::string& name);
  /// Gradients aligned with the ParamSet order (zeros for untouched entries).
  std::vector<ad::Tensor<T>> grads() const;

 private:
  ad::Tape<T>& tape_;
  const ParamSet<T>& params_;
  bool trainable_;
  std::vector<ad::Var> vars_;
};

/// Parameters for one torso (five embedders + LSTM) under `prefix`.
template <class T>
void add_torso_params(ParamSet<T>& ps, const std::string& prefix, const NetConfig& cfg, std::mt19937_64& rng);
template <class T>
ParamSet<T> make_policy_params(const NetConfig& cfg, std::mt19937_64& rng);
/// Twin critics under "q1/" and "q2/".
template <class T>
ParamSet<T> make_critic_params(const NetConfig& cfg, std::mt19937_64& rng);

template <class T>
struct ObsVars {
  ad::Var lidar, det, goal, prev_action, collision;
};

template <class T>
ObsVars<T> bind_obs(ad::Tape<T>& tape, const ObsBatch<T>& obs);

/// Per-embedder contributions and their elementwise sum.
struct EmbedParts {
  ad::Var lidar, det, prev_action, collision, goal, total;
};

template <class T>
EmbedParts embed_observation(Binder<T>& p, const std::string& prefix, const ObsVars<T>& obs,
                             const NetConfig& cfg);

struct LstmState {
  ad::Var h, c;
};

template <class T>
LstmState zero_lstm_state(ad::Tape<T>& tape, int batch, const NetConfig& cfg);

/// One LSTM cell step on embedding rows [B, E]; the new h is the cell output.
template <class T>
LstmState recurrent_step(Binder<T>& p, const std::string& prefix, ad::Var e, const LstmState& st,
                         const NetConfig& cfg);

/// Embeds `steps * batch` time-major rows and threads the LSTM from `init` (zero when absent).
/// Returns outputs [steps*batch, H] and the final state.
template <class T>
std::pair<ad::Var, LstmState> run_torso(Binder<T>& p, const std::string& prefix, const ObsVars<T>& obs,
                                        int steps, int batch, const NetConfig& cfg,
                                        const LstmState* init = nullptr);

struct PolicyOut {
  ad::Var mean, log_std;
};

template <class T>
PolicyOut policy_head(Binder<T>& p, ad::Var lstm_out, const NetConfig& cfg);

struct PolicySample {
  ad::Var action, log_prob;  // [N, A], [N, 1]
};

/// Reparameterized tanh-Gaussian sample; noise is [N, A] standard normal.
template <class T>
PolicySample policy_sample(ad::Tape<T>& tape, const PolicyOut& out, const ad::Tensor<T>& noise);

/// Q head under `prefix` ("q1/" or "q2/") on concat(lstm_out, action).
template <class T>
ad::Var q_value(Binder<T>& p, const std::string& prefix, ad::Var lstm_out, ad::Var action,
                const NetConfig& cfg);

/// Stateful single-observation policy evaluation for collectors and evaluation.
class PolicyRunner {
 public:
  PolicyRunner(NetConfig cfg, std::shared_ptr<const ParamSet<float>> params);

  void reset();
  void set_params(std::shared_ptr<const ParamSet<float>> params);
  /// Stochastic when `noise` is given, otherwise tanh(mean).
  std::array<float, 2> act(const Observation& obs, const std::array<float, 2>* noise = nullptr,
                           float* log_prob = nullptr);
  const NetConfig& config() const { return cfg_; }

 private:
  NetConfig cfg_;
  std::shared_ptr<const ParamSet<float>> params_;
  ad::Tensor<float> h_, c_;
};

/// Names and shapes, stored beside checkpoints.
nlohmann::json layout_manifest(const ParamSet<float>& params);
void validate_layout(const ParamSet<float>& params, const nlohmann::json& manifest);

}  // namespace objnav
