#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "objnav/bandit.hpp"
#include "objnav/error.hpp"
#include "objnav/gradcheck.hpp"
#include "objnav/sac.hpp"

using namespace objnav;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Batch<double> make_batch(const NetConfig& cfg, std::mt19937_64& rng, int b, int s) {
  Batch<double> out;
  out.batch = b;
  out.steps = s;
  out.obs = gradcheck::random_obs((s + 1) * b, cfg, rng);
  out.action = gradcheck::random_tensor({b * s, 2}, rng, -0.9, 0.9);
  out.reward = gradcheck::random_tensor({b * s, 1}, rng);
  out.done = Tensor<double>({b * s, 1});
  out.mask = Tensor<double>({b * s, 1}, 1.0);
  return out;
}

struct NextParts {
  std::vector<double> minq, logp;
};

/// min(Q1,Q2) and log pi at o_{t+1} computed directly from the network pieces.
NextParts next_parts(const ParamSet<double>& tq, const ParamSet<double>& pol, const NetConfig& cfg,
                     const Batch<double>& b, const Tensor<double>& noise) {
  const int B = b.batch, S = b.steps;
  Tape<double> t(false);
  ObsVars<double> ov = bind_obs(t, b.obs);
  Binder<double> pp(t, pol, false), qp(t, tq, false);
  Var pout = run_torso(pp, "policy/", ov, S + 1, B, cfg).first;
  PolicySample s = policy_sample(t, policy_head(pp, ad::slice(t, pout, 0, B, (S + 1) * B), cfg), noise);
  Var q1 = q_value(qp, "q1/", ad::slice(t, run_torso(qp, "q1/", ov, S + 1, B, cfg).first, 0, B, (S + 1) * B),
                   s.action, cfg);
  Var q2 = q_value(qp, "q2/", ad::slice(t, run_torso(qp, "q2/", ov, S + 1, B, cfg).first, 0, B, (S + 1) * B),
                   s.action, cfg);
  NextParts np;
  for (int i = 0; i < B * S; ++i) {
    np.minq.push_back(std::min(t.value(q1)[static_cast<size_t>(i)], t.value(q2)[static_cast<size_t>(i)]));
    np.logp.push_back(t.value(s.log_prob)[static_cast<size_t>(i)]);
  }
  return np;
}

}  // namespace

TEST_CASE("config json round trip and validation") {
  SacConfig c;
  c.gamma = 0.95;
  nlohmann::json j = c;
  CHECK(j.at("lr").get<double>() == doctest::Approx(0.000316));
  SacConfig back = j.get<SacConfig>();
  CHECK(back.gamma == 0.95);
  j["tau"] = 0.0;
  CHECK_THROWS_AS(j.get<SacConfig>(), ParseError);
}

TEST_CASE("soft Bellman target arithmetic") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(1);
  ParamSet<double> pol = make_policy_params<double>(cfg, rng);
  ParamSet<double> tq = make_critic_params<double>(cfg, rng);
  Batch<double> b = make_batch(cfg, rng, 2, 3);
  b.done[4] = 1;
  b.mask[4 + 2] = 0;
  Tensor<double> noise = normal_noise<double>({6, 2}, rng);
  const double alpha = 0.5, gamma = 0.99;
  Tensor<double> y = critic_target(tq, pol, cfg, b, alpha, gamma, noise);
  NextParts np = next_parts(tq, pol, cfg, b, noise);
  for (size_t i = 0; i < 6; ++i) {
    const double expect = b.reward[i] + gamma * (1 - b.done[i]) * (np.minq[i] - alpha * np.logp[i]);
    CHECK(y[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(y[4] == b.reward[4]);
  // The forced example: r=1, gamma=.99, minQ=2, alpha=.5, log pi=-1.
  CHECK(1 + 0.99 * (2 - 0.5 * -1) == doctest::Approx(3.475));

  Tensor<double> y0 = critic_target(tq, pol, cfg, b, alpha, 0.0, noise);
  for (size_t i = 0; i < 6; ++i) CHECK(y0[i] == b.reward[i]);
}

TEST_CASE("target for a single transition with controlled heads") {
  // Zero networks with output biases pin Q1=2, Q2=3 and the policy to mean 0, log-std 0.
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(2);
  ParamSet<double> pol = make_policy_params<double>(cfg, rng);
  ParamSet<double> tq = make_critic_params<double>(cfg, rng);
  for (auto& e : pol) e.value.fill(0);
  for (auto& e : tq) e.value.fill(0);
  tq.at("q1/head/fc1/b")[0] = 2.0;
  tq.at("q2/head/fc1/b")[0] = 3.0;
  Batch<double> b = make_batch(cfg, rng, 1, 1);
  b.reward[0] = 1.0;
  Tensor<double> noise({1, 2});
  Tensor<double> y = critic_target(tq, pol, cfg, b, 0.5, 0.99, noise);
  const double logp = 2 * -0.9189385332046727 - 2 * std::log(1 + 1e-6);
  CHECK(y[0] == doctest::Approx(1 + 0.99 * (2 - 0.5 * logp)).epsilon(1e-12));
}

TEST_CASE("critic loss is zero at the targets and non-negative") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(3);
  ParamSet<double> q = make_critic_params<double>(cfg, rng);
  for (auto& e : q) e.value.fill(0);
  q.at("q1/head/fc1/b")[0] = 0.7;
  q.at("q2/head/fc1/b")[0] = 0.7;
  Batch<double> b = make_batch(cfg, rng, 2, 2);
  Tensor<double> y({4, 1}, 0.7);
  CHECK(critic_loss(q, cfg, b, y).value == doctest::Approx(0.0));
  for (int i = 0; i < 20; ++i) {
    ParamSet<double> r = make_critic_params<double>(cfg, rng);
    CHECK(critic_loss(r, cfg, b, gradcheck::random_tensor({4, 1}, rng)).value >= 0.0);
  }
}

TEST_CASE("masked steps carry no gradient") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(4);
  ParamSet<double> q = make_critic_params<double>(cfg, rng);
  Batch<double> b = make_batch(cfg, rng, 2, 3);
  b.mask[3] = 0;
  b.mask[5] = 0;  // sequence 1 keeps only t=0
  Tensor<double> y = gradcheck::random_tensor({6, 1}, rng);
  LossGrad<double> base = critic_loss(q, cfg, b, y);
  Tensor<double> y2 = y;
  y2[3] += 10;
  y2[5] -= 7;
  Batch<double> b2 = b;
  b2.action[6] = -b2.action[6];
  b2.reward[5] = 42;
  LossGrad<double> other = critic_loss(q, cfg, b2, y2);
  CHECK(other.value == base.value);
  for (size_t k = 0; k < base.grads.size(); ++k) CHECK(other.grads[k].storage() == base.grads[k].storage());

  Batch<double> none = b;
  none.mask.fill(0);
  CHECK_THROWS_AS(critic_loss(q, cfg, none, y), InvariantError);
  CHECK_THROWS_AS(actor_loss(make_policy_params<double>(cfg, rng), q, cfg, none, 0.1,
                             Tensor<double>({6, 2})),
                  InvariantError);
}

TEST_CASE("batch validation") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(5);
  Batch<double> b = make_batch(cfg, rng, 2, 3);
  CHECK_NOTHROW(b.validate(2));
  Batch<double> gap = b;
  gap.mask[2] = 0;  // t=1, seq 0 masked but t=2 open
  CHECK_THROWS_AS(gap.validate(2), InvariantError);
  Batch<double> after_done = b;
  after_done.done[0] = 1;
  CHECK_THROWS_AS(after_done.validate(2), InvariantError);
  Batch<double> rows = b;
  rows.obs = rows.obs.slice_rows(0, 6);
  CHECK_THROWS_AS(rows.validate(2), ShapeError);
}

TEST_CASE("actor loss ignores the mean when alpha is zero and Q is flat in the action") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(6);
  ParamSet<double> pol = make_policy_params<double>(cfg, rng);
  ParamSet<double> q = make_critic_params<double>(cfg, rng);
  for (auto& e : q) {
    if (e.name.find("head/fc0/w") != std::string::npos) {
      const int rows = e.value.dim(0), cols = e.value.dim(1);
      for (int r = rows - 2; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) e.value[static_cast<size_t>(r * cols + c)] = 0;
      }
    }
  }
  Batch<double> b = make_batch(cfg, rng, 2, 2);
  Tensor<double> noise = normal_noise<double>({4, 2}, rng);
  ActorLoss<double> al = actor_loss(pol, q, cfg, b, 0.0, noise);
  for (size_t k = 0; k < pol.size(); ++k) {
    for (double g : al.grads[k].values()) CHECK(g == 0.0);
  }
}

TEST_CASE("actor loss is linear in alpha") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(7);
  ParamSet<double> pol = make_policy_params<double>(cfg, rng);
  ParamSet<double> q = make_critic_params<double>(cfg, rng);
  Batch<double> b = make_batch(cfg, rng, 2, 2);
  Tensor<double> noise = normal_noise<double>({4, 2}, rng);
  ActorLoss<double> a0 = actor_loss(pol, q, cfg, b, 0.0, noise);
  ActorLoss<double> a1 = actor_loss(pol, q, cfg, b, 0.3, noise);
  double mean_lp = 0;
  for (double v : a0.log_prob.values()) mean_lp += v / 4;
  CHECK(a1.value - a0.value == doctest::Approx(0.3 * mean_lp).epsilon(1e-10));
  if (mean_lp > 0) CHECK(a1.value > a0.value);
}

TEST_CASE("alpha loss signs") {
  Tensor<double> mask({3, 1}, 1.0);
  Tensor<double> at_target({3, 1}, 2.0);
  LossGrad<double> lg = alpha_loss(0.3, at_target, mask, -2.0);
  CHECK(lg.grads[0][0] == doctest::Approx(0.0));
  Tensor<double> sharp({3, 1}, 3.0);
  LossGrad<double> up = alpha_loss(0.3, sharp, mask, -2.0);
  CHECK(up.grads[0][0] < 0.0);  // descent raises log_alpha
  CHECK(up.value == doctest::Approx(-std::exp(0.3) * 1.0));
}

TEST_CASE("SAC loss gradients match central differences") {
  for (const auto& r : gradcheck::check_losses(8, 20)) {
    INFO(r.name, " checked=", r.fd.checked, " skipped=", r.fd.skipped);
    CHECK(r.fd.max_rel_error <= 1e-4);
    CHECK(r.fd.checked > 10 * r.fd.skipped);
  }
}

TEST_CASE("train step with zero learning rate only moves targets") {
  NetConfig cfg = gradcheck::tiny_net();
  SacConfig sc;
  sc.adam.lr = 0;
  SacState<double> st = make_sac_state<double>(cfg, sc, 9);
  for (auto& e : st.critic) {
    for (auto& v : e.value.storage()) v += 0.01;
  }
  std::mt19937_64 rng(10);
  Batch<double> b = make_batch(cfg, rng, 2, 3);
  const SacState<double> before = st;
  TrainMetrics m = train_step(st, b, 77);
  CHECK(st.updates == 1);
  CHECK(st.policy.checksum() == before.policy.checksum());
  CHECK(st.critic.checksum() == before.critic.checksum());
  CHECK(st.log_alpha() == before.log_alpha());
  for (size_t k = 0; k < st.critic.size(); ++k) {
    for (size_t i = 0; i < st.critic[k].value.size(); ++i) {
      const double expect = 0.995 * before.critic_target[k].value[i] + 0.005 * before.critic[k].value[i];
      CHECK(st.critic_target[k].value[i] == doctest::Approx(expect).epsilon(1e-14));
    }
  }
  CHECK(std::isfinite(m.critic_loss));
  CHECK(m.alpha == doctest::Approx(1.0));
}

TEST_CASE("train step is deterministic given state, batch and noise seed") {
  NetConfig cfg = gradcheck::tiny_net();
  SacConfig sc;
  std::mt19937_64 rng(11);
  Batch<float> b = make_batch(cfg, rng, 2, 3).cast<float>();
  SacState<float> a = make_sac_state<float>(cfg, sc, 3), c = make_sac_state<float>(cfg, sc, 3);
  for (int i = 0; i < 5; ++i) {
    TrainMetrics ma = train_step(a, b, 100 + static_cast<uint64_t>(i));
    TrainMetrics mc = train_step(c, b, 100 + static_cast<uint64_t>(i));
    CHECK(ma.critic_loss == mc.critic_loss);
    CHECK(ma.actor_loss == mc.actor_loss);
  }
  CHECK(a.policy.checksum() == c.policy.checksum());
  CHECK(a.critic_target.checksum() == c.critic_target.checksum());
}

TEST_CASE("bandit converges to the optimum") {
  BanditConfig cfg;
  BanditResult r = run_bandit(cfg, 1);
  INFO("steps=", r.steps, " action=", r.action[0], ",", r.action[1], " distance=", r.distance);
  CHECK(r.converged);
  CHECK(r.steps <= 2000);
}
