#include "objnav/sac.hpp"

#include <cmath>

#include "objnav/error.hpp"

namespace objnav {

void to_json(nlohmann::json& j, const SacConfig& c) {
  j = nlohmann::json{{"gamma", c.gamma},
                     {"tau", c.tau},
                     {"batch_size", c.batch_size},
                     {"crop_len", c.crop_len},
                     {"target_entropy", c.target_entropy},
                     {"init_log_alpha", c.init_log_alpha},
                     {"lr", c.adam.lr},
                     {"beta1", c.adam.beta1},
                     {"beta2", c.adam.beta2},
                     {"eps", c.adam.eps}};
}

void from_json(const nlohmann::json& j, SacConfig& c) {
  SacConfig d;
  c.gamma = j.value("gamma", d.gamma);
  c.tau = j.value("tau", d.tau);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.crop_len = j.value("crop_len", d.crop_len);
  c.target_entropy = j.value("target_entropy", d.target_entropy);
  c.init_log_alpha = j.value("init_log_alpha", d.init_log_alpha);
  c.adam.lr = j.value("lr", d.adam.lr);
  c.adam.beta1 = j.value("beta1", d.adam.beta1);
  c.adam.beta2 = j.value("beta2", d.adam.beta2);
  c.adam.eps = j.value("eps", d.adam.eps);
  if (!(c.gamma > 0 && c.gamma < 1)) throw ParseError("sac config: gamma must lie in (0,1)");
  if (!(c.tau > 0 && c.tau <= 1)) throw ParseError("sac config: tau must lie in (0,1]");
  if (c.crop_len < 1) throw ParseError("sac config: crop_len must be >= 1");
  if (c.batch_size < 1) throw ParseError("sac config: batch_size must be >= 1");
}

template <class T>
void Batch<T>::validate(int action_dim) const {
  const int n = batch * steps;
  if (batch < 1 || steps < 1) throw ShapeError("batch: empty");
  if (obs.rows != (steps + 1) * batch) {
    throw ShapeError("batch: expected " + std::to_string((steps + 1) * batch) + " observation rows, got " +
                     std::to_string(obs.rows));
  }
  const ad::Shape col{n, 1};
  if (action.shape() != ad::Shape{n, action_dim} || reward.shape() != col || done.shape() != col ||
      mask.shape() != col) {
    throw ShapeError("batch: action/reward/done/mask shapes inconsistent with " + std::to_string(steps) + "x" +
                     std::to_string(batch));
  }
  for (int b = 0; b < batch; ++b) {
    bool open = true;
    for (int t = 0; t < steps; ++t) {
      const size_t r = static_cast<size_t>(t * batch + b);
      const bool m = mask[r] != T(0);
      if (m && !open) throw InvariantError("batch: mask is not a prefix of ones");
      if (!m) open = false;
      if (done[r] != T(0)) open = false;
    }
  }
}

template <class T>
template <class U>
SacState<U> SacState<T>::cast() const {
  SacState<U> out;
  out.net = net;
  out.cfg = cfg;
  out.policy = policy.template cast<U>();
  out.critic = critic.template cast<U>();
  out.critic_target = critic_target.template cast<U>();
  out.alpha = alpha.template cast<U>();
  auto cast_opt = [](const AdamState<T>& s) {
    AdamState<U> o;
    for (const auto& m : s.m) o.m.push_back(m.template cast<U>());
    for (const auto& v : s.v) o.v.push_back(v.template cast<U>());
    o.t = s.t;
    return o;
  };
  out.policy_opt = cast_opt(policy_opt);
  out.critic_opt = cast_opt(critic_opt);
  out.alpha_opt = cast_opt(alpha_opt);
  out.updates = updates;
  return out;
}

template <class T>
SacState<T> make_sac_state(const NetConfig& net, const SacConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  SacState<T> st;
  st.net = net;
  st.cfg = cfg;
  st.policy = make_policy_params<T>(net, rng);
  st.critic = make_critic_params<T>(net, rng);
  st.critic_target = st.critic;
  st.alpha.add("log_alpha", ad::Tensor<T>({1}, static_cast<T>(cfg.init_log_alpha)));
  st.policy_opt = AdamState<T>::zeros_like(st.policy);
  st.critic_opt = AdamState<T>::zeros_like(st.critic);
  st.alpha_opt = AdamState<T>::zeros_like(st.alpha);
  return st;
}

template <class T>
ad::Tensor<T> normal_noise(ad::Shape shape, std::mt19937_64& rng) {
  ad::Tensor<T> t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.values()) v = static_cast<T>(n(rng));
  return t;
}

namespace {

template <class T>
T mask_count(const ad::Tensor<T>& mask, const char* op) {
  T n = 0;
  for (T m : mask.values()) n += m;
  if (!(n > T(0))) throw InvariantError(std::string(op) + ": mask selects no steps");
  return n;
}

}  // namespace

template <class T>
ad::Tensor<T> critic_target(const ParamSet<T>& target_critic, const ParamSet<T>& policy, const NetConfig& net,
                            const Batch<T>& batch, T alpha, T gamma, const ad::Tensor<T>& noise) {
  const int B = batch.batch, S = batch.steps, n = B * S;
  ad::Tape<T> tape(false);
  ObsVars<T> obs = bind_obs(tape, batch.obs);

  Binder<T> pp(tape, policy, false);
  auto [pout, pst] = run_torso(pp, "policy/", obs, S + 1, B, net);
  (void)pst;
  PolicySample next = policy_sample(tape, policy_head(pp, ad::slice(tape, pout, 0, B, (S + 1) * B), net), noise);

  Binder<T> qp(tape, target_critic, false);
  ad::Var q[2];
  const char* heads[2] = {"q1/", "q2/"};
  for (int k = 0; k < 2; ++k) {
    auto [qout, qst] = run_torso(qp, heads[k], obs, S + 1, B, net);
    (void)qst;
    q[k] = q_value(qp, heads[k], ad::slice(tape, qout, 0, B, (S + 1) * B), next.action, net);
  }
  const auto& q1 = tape.value(q[0]);
  const auto& q2 = tape.value(q[1]);
  const auto& lp = tape.value(next.log_prob);
  ad::Tensor<T> y({n, 1});
  for (size_t r = 0; r < static_cast<size_t>(n); ++r) {
    const T soft = std::min(q1[r], q2[r]) - alpha * lp[r];
    y[r] = batch.reward[r] + gamma * (T(1) - batch.done[r]) * soft;
  }
  return y;
}

template <class T>
LossGrad<T> critic_loss(const ParamSet<T>& critic, const NetConfig& net, const Batch<T>& batch,
                        const ad::Tensor<T>& y) {
  const int B = batch.batch, S = batch.steps;
  const T count = mask_count(batch.mask, "critic_loss");
  ObsBatch<T> cur = batch.obs.slice_rows(0, S * B);
  ad::Tape<T> tape;
  ObsVars<T> obs = bind_obs(tape, cur);
  Binder<T> qp(tape, critic, true);
  ad::Var act = tape.constant_ref(batch.action);
  ad::Var yv = tape.constant_ref(y);
  ad::Var sq[2];
  const char* heads[2] = {"q1/", "q2/"};
  for (int k = 0; k < 2; ++k) {
    auto [qout, qst] = run_torso(qp, heads[k], obs, S, B, net);
    (void)qst;
    sq[k] = ad::square(tape, ad::sub(tape, q_value(qp, heads[k], qout, act, net), yv));
  }
  ad::Var masked = ad::mul(tape, ad::add(tape, sq[0], sq[1]), tape.constant_ref(batch.mask));
  ad::Var loss = ad::scale(tape, ad::sum(tape, masked), T(0.5) / count);
  tape.backward(loss);
  return {tape.value(loss).item(), qp.grads()};
}

template <class T>
ActorLoss<T> actor_loss(const ParamSet<T>& policy, const ParamSet<T>& critic, const NetConfig& net,
                        const Batch<T>& batch, T alpha, const ad::Tensor<T>& noise) {
  const int B = batch.batch, S = batch.steps;
  const T count = mask_count(batch.mask, "actor_loss");
  ObsBatch<T> cur = batch.obs.slice_rows(0, S * B);
  ad::Tape<T> tape;
  ObsVars<T> obs = bind_obs(tape, cur);
  Binder<T> pp(tape, policy, true);
  auto [pout, pst] = run_torso(pp, "policy/", obs, S, B, net);
  (void)pst;
  PolicySample s = policy_sample(tape, policy_head(pp, pout, net), noise);

  Binder<T> qp(tape, critic, false);
  ad::Var q[2];
  const char* heads[2] = {"q1/", "q2/"};
  for (int k = 0; k < 2; ++k) {
    auto [qout, qst] = run_torso(qp, heads[k], obs, S, B, net);
    (void)qst;
    q[k] = q_value(qp, heads[k], qout, s.action, net);
  }
  ad::Var minq = ad::min_elementwise(tape, q[0], q[1]);
  ad::Var per = ad::sub(tape, ad::scale(tape, s.log_prob, alpha), minq);
  ad::Var loss = ad::scale(tape, ad::sum(tape, ad::mul(tape, per, tape.constant_ref(batch.mask))), T(1) / count);
  tape.backward(loss);
  ActorLoss<T> out;
  out.value = tape.value(loss).item();
  out.grads = pp.grads();
  out.log_prob = tape.value(s.log_prob);
  return out;
}

template <class T>
LossGrad<T> alpha_loss(T log_alpha, const ad::Tensor<T>& log_prob, const ad::Tensor<T>& mask, T target_entropy) {
  if (log_prob.shape() != mask.shape()) {
    throw ShapeError("alpha_loss: log_prob " + ad::shape_str(log_prob.shape()) + " vs mask " +
                     ad::shape_str(mask.shape()));
  }
  const T count = mask_count(mask, "alpha_loss");
  ad::Tensor<T> la({1}, log_alpha);
  ad::Tape<T> tape;
  ad::Var la_var = tape.parameter(la);
  ad::Var a = ad::exp(tape, la_var);
  T s = 0;
  for (size_t i = 0; i < mask.size(); ++i) s += mask[i] * (log_prob[i] + target_entropy);
  // loss = -alpha * s / count
  ad::Var loss = ad::sum(tape, ad::scale(tape, a, -s / count));
  tape.backward(loss);
  LossGrad<T> out;
  out.value = tape.value(loss).item();
  out.grads.push_back(tape.grad(la_var));
  return out;
}

template <class T>
TrainMetrics train_step(SacState<T>& st, const Batch<T>& batch, uint64_t noise_seed) {
  batch.validate(st.net.action_dim);
  std::mt19937_64 rng(noise_seed);
  const ad::Shape noise_shape{batch.batch * batch.steps, st.net.action_dim};
  const T alpha = std::exp(st.log_alpha());

  ad::Tensor<T> next_noise = normal_noise<T>(noise_shape, rng);
  ad::Tensor<T> y = critic_target(st.critic_target, st.policy, st.net, batch, alpha,
                                  static_cast<T>(st.cfg.gamma), next_noise);
  LossGrad<T> cl = critic_loss(st.critic, st.net, batch, y);
  adam_step(st.critic, cl.grads, st.critic_opt, st.cfg.adam);

  ad::Tensor<T> noise = normal_noise<T>(noise_shape, rng);
  ActorLoss<T> al = actor_loss(st.policy, st.critic, st.net, batch, alpha, noise);
  adam_step(st.policy, al.grads, st.policy_opt, st.cfg.adam);

  LossGrad<T> tl = alpha_loss(st.log_alpha(), al.log_prob, batch.mask, static_cast<T>(st.cfg.target_entropy));
  adam_step(st.alpha, tl.grads, st.alpha_opt, st.cfg.adam);

  polyak_update(st.critic_target, st.critic, st.cfg.tau);
  st.updates += 1;

  TrainMetrics m;
  m.critic_loss = static_cast<double>(cl.value);
  m.actor_loss = static_cast<double>(al.value);
  m.alpha = static_cast<double>(alpha);
  double lp = 0, cnt = 0;
  for (size_t i = 0; i < batch.mask.size(); ++i) {
    lp += static_cast<double>(batch.mask[i] * al.log_prob[i]);
    cnt += static_cast<double>(batch.mask[i]);
  }
  m.entropy = -lp / cnt;
  return m;
}

#define OBJNAV_SAC_INSTANTIATE(T)                                                                          \
  template struct Batch<T>;                                                                                \
  template SacState<T> make_sac_state<T>(const NetConfig&, const SacConfig&, uint64_t);                     \
  template ad::Tensor<T> normal_noise<T>(ad::Shape, std::mt19937_64&);                                     \
  template ad::Tensor<T> critic_target<T>(const ParamSet<T>&, const ParamSet<T>&, const NetConfig&,       \
                                          const Batch<T>&, T, T, const ad::Tensor<T>&);                    \
  template LossGrad<T> critic_loss<T>(const ParamSet<T>&, const NetConfig&, const Batch<T>&,               \
                                      const ad::Tensor<T>&);                                               \
  template ActorLoss<T> actor_loss<T>(const ParamSet<T>&, const ParamSet<T>&, const NetConfig&,            \
                                      const Batch<T>&, T, const ad::Tensor<T>&);                           \
  template LossGrad<T> alpha_loss<T>(T, const ad::Tensor<T>&, const ad::Tensor<T>&, T);                    \
  template TrainMetrics train_step<T>(SacState<T>&, const Batch<T>&, uint64_t);

OBJNAV_SAC_INSTANTIATE(float)
OBJNAV_SAC_INSTANTIATE(double)

template SacState<double> SacState<float>::cast<double>() const;
template SacState<float> SacState<double>::cast<float>() const;
template SacState<float> SacState<float>::cast<float>() const;
template SacState<double> SacState<double>::cast<double>() const;

}  // namespace objnav
