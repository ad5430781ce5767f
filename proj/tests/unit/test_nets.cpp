#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "objnav/error.hpp"
#include "objnav/gradcheck.hpp"
#include "objnav/nets.hpp"

using namespace objnav;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

ParamSet<double> zeroed(ParamSet<double> ps) {
  for (auto& e : ps) e.value.fill(0.0);
  return ps;
}

Observation sample_observation(const NetConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Observation o;
  o.lidar.resize(static_cast<size_t>(cfg.lidar_rays));
  for (auto& r : o.lidar) r = static_cast<float>(cfg.lidar_max_range) * u(rng);
  o.det.resize(static_cast<size_t>(cfg.det_bins));
  for (auto& d : o.det) d = u(rng) < 0.2f ? 1 : 0;
  o.goal[3] = 1.f;
  o.prev_action = {2 * u(rng) - 1, 2 * u(rng) - 1};
  o.collision = u(rng) < 0.5f ? 1 : 0;
  return o;
}

}  // namespace

TEST_CASE("default conv stack output length") {
  NetConfig cfg;
  CHECK(cfg.conv_output_len() == 400);
  nlohmann::json j = cfg;
  NetConfig back = j.get<NetConfig>();
  CHECK(back.conv_channels == cfg.conv_channels);
  CHECK(back.lstm_dim == cfg.lstm_dim);
}

TEST_CASE("observation batch normalizes lidar") {
  NetConfig cfg;
  std::mt19937_64 rng(1);
  Observation o = sample_observation(cfg, rng);
  o.lidar[0] = 5.0f;
  o.lidar[1] = 2.5f;
  const Observation* rows[] = {&o};
  ObsBatch<double> b = make_obs_batch<double>(rows, cfg);
  CHECK(b.lidar.shape() == ad::Shape{1, cfg.lidar_rays, 1});
  CHECK(b.lidar[0] == doctest::Approx(1.0));
  CHECK(b.lidar[1] == doctest::Approx(0.5));
  CHECK(b.goal[3] == 1.0);
  Observation bad = o;
  bad.lidar.pop_back();
  const Observation* bad_rows[] = {&bad};
  CHECK_THROWS_AS(make_obs_batch<double>(bad_rows, cfg), ShapeError);
}

TEST_CASE("all-zero observation embeds to the bias paths") {
  NetConfig cfg;
  std::mt19937_64 rng(2);
  ParamSet<double> ps = make_policy_params<double>(cfg, rng);
  for (auto& e : ps) {
    if (e.name.ends_with("/b")) e.value.fill(0.1);
  }
  ObsBatch<double> obs = gradcheck::random_obs(1, cfg, rng);
  obs.lidar.fill(0);
  obs.det.fill(0);
  obs.goal.fill(0);
  obs.prev_action.fill(0);
  obs.collision.fill(0);
  Tape<double> t(false);
  Binder<double> p(t, ps, false);
  EmbedParts e = embed_observation(p, "policy/", bind_obs(t, obs), cfg);
  for (double v : t.value(e.total).values()) CHECK(std::isfinite(v));
  // With zero inputs each MLP path is relu(relu(b0) W1 + b1).
  const Tensor<double>& w1 = ps.at("policy/goal/fc1/w");
  for (int j = 0; j < cfg.embed_dim; ++j) {
    double s = 0.1;
    for (int i = 0; i < cfg.embed_dim; ++i) s += 0.1 * w1[static_cast<size_t>(i * cfg.embed_dim + j)];
    CHECK(t.value(e.goal)[static_cast<size_t>(j)] == doctest::Approx(std::max(s, 0.0)));
  }
}

TEST_CASE("embedder additivity") {
  NetConfig cfg;
  std::mt19937_64 rng(3);
  ParamSet<double> ps = make_policy_params<double>(cfg, rng);
  ObsBatch<double> a = gradcheck::random_obs(2, cfg, rng);
  ObsBatch<double> b = a;
  b.goal.fill(0);
  b.goal[0] = 1;
  b.goal[static_cast<size_t>(kNumLabels + 5)] = 1;
  Tape<double> t(false);
  Binder<double> p(t, ps, false);
  EmbedParts ea = embed_observation(p, "policy/", bind_obs(t, a), cfg);
  EmbedParts eb = embed_observation(p, "policy/", bind_obs(t, b), cfg);
  CHECK(t.value(ea.lidar).storage() == t.value(eb.lidar).storage());
  CHECK(t.value(ea.det).storage() == t.value(eb.det).storage());
  CHECK(t.value(ea.prev_action).storage() == t.value(eb.prev_action).storage());
  CHECK(t.value(ea.collision).storage() == t.value(eb.collision).storage());
  CHECK(t.value(ea.goal).storage() != t.value(eb.goal).storage());
  const auto& tot = t.value(ea.total);
  for (size_t i = 0; i < tot.size(); ++i) {
    const double s = t.value(ea.lidar)[i] + t.value(ea.det)[i] + t.value(ea.prev_action)[i] +
                     t.value(ea.collision)[i] + t.value(ea.goal)[i];
    CHECK(tot[i] == doctest::Approx(s));
  }
}

TEST_CASE("zero LSTM parameters give zero output") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(4);
  ParamSet<double> ps = make_policy_params<double>(cfg, rng);
  for (auto& e : ps) {
    if (e.name.find("lstm/") != std::string::npos) e.value.fill(0.0);
  }
  ObsBatch<double> obs = gradcheck::random_obs(5 * 2, cfg, rng);
  Tape<double> t(false);
  Binder<double> p(t, ps, false);
  auto [out, st] = run_torso(p, "policy/", bind_obs(t, obs), 5, 2, cfg);
  for (double v : t.value(out).values()) CHECK(v == 0.0);
  for (double v : t.value(st.c).values()) CHECK(v == 0.0);
}

TEST_CASE("torso is a pure function of parameters and inputs") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(5);
  ParamSet<double> ps = make_policy_params<double>(cfg, rng);
  ObsBatch<double> obs = gradcheck::random_obs(6, cfg, rng);
  auto run = [&] {
    Tape<double> t(false);
    Binder<double> p(t, ps, false);
    return t.value(run_torso(p, "policy/", bind_obs(t, obs), 3, 2, cfg).first).storage();
  };
  CHECK(run() == run());
}

TEST_CASE("policy sample at zero mean and log-std") {
  Tape<double> t;
  Tensor<double> mean({1, 2}), log_std({1, 2}), noise({1, 2});
  PolicyOut out{t.constant_ref(mean), t.constant_ref(log_std)};
  PolicySample s = policy_sample(t, out, noise);
  CHECK(t.value(s.action)[0] == 0.0);
  CHECK(t.value(s.action)[1] == 0.0);
  const double expect = 2 * -0.9189385332046727 - 2 * std::log(1 + 1e-6);
  CHECK(t.value(s.log_prob)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("squashed density integrates to one") {
  const double m0 = 0.3, m1 = -0.4, ls0 = -0.5, ls1 = -0.2;
  const int n = 1000000;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1 + 1e-9, 1 - 1e-9);
  Tensor<double> mean({n, 2}), log_std({n, 2}), noise({n, 2});
  for (int i = 0; i < n; ++i) {
    const double a0 = u(rng), a1 = u(rng);
    mean[2 * i] = m0;
    mean[2 * i + 1] = m1;
    log_std[2 * i] = ls0;
    log_std[2 * i + 1] = ls1;
    noise[2 * i] = (std::atanh(a0) - m0) / std::exp(ls0);
    noise[2 * i + 1] = (std::atanh(a1) - m1) / std::exp(ls1);
  }
  Tape<double> t(false);
  PolicySample s = policy_sample(t, PolicyOut{t.constant_ref(mean), t.constant_ref(log_std)}, noise);
  double acc = 0;
  for (double lp : t.value(s.log_prob).values()) acc += std::exp(lp);
  const double integral = 4.0 * acc / n;
  CHECK(integral == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("sampled actions stay inside the open box with finite log-prob") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(7);
  for (int draw = 0; draw < 200; ++draw) {
    ParamSet<double> ps = make_policy_params<double>(cfg, rng);
    ObsBatch<double> obs = gradcheck::random_obs(4, cfg, rng);
    std::normal_distribution<double> nd(0, 3);
    Tensor<double> noise({4, 2});
    for (auto& v : noise.storage()) v = nd(rng);
    Tape<double> t(false);
    Binder<double> p(t, ps, false);
    Var out = run_torso(p, "policy/", bind_obs(t, obs), 1, 4, cfg).first;
    PolicySample s = policy_sample(t, policy_head(p, out, cfg), noise);
    for (double a : t.value(s.action).values()) CHECK(std::abs(a) <= 1.0);
    for (double lp : t.value(s.log_prob).values()) CHECK(std::isfinite(lp));
  }
}

TEST_CASE("log-std is clamped") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(8);
  ParamSet<double> ps = zeroed(make_policy_params<double>(cfg, rng));
  ps.at("policy/head/fc1/b") = Tensor<double>({4}, {0.0, 0.0, 50.0, -50.0});
  ObsBatch<double> obs = gradcheck::random_obs(1, cfg, rng);
  Tape<double> t(false);
  Binder<double> p(t, ps, false);
  PolicyOut po = policy_head(p, run_torso(p, "policy/", bind_obs(t, obs), 1, 1, cfg).first, cfg);
  CHECK(t.value(po.log_std)[0] == kLogStdMax);
  CHECK(t.value(po.log_std)[1] == kLogStdMin);
}

TEST_CASE("Q heads") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(9);
  ParamSet<double> ps = make_critic_params<double>(cfg, rng);
  ObsBatch<double> obs = gradcheck::random_obs(3, cfg, rng);
  Tensor<double> act = gradcheck::random_tensor({3, 2}, rng);
  auto q = [&](const ParamSet<double>& params, const char* head) {
    Tape<double> t(false);
    Binder<double> p(t, params, false);
    Var out = run_torso(p, head, bind_obs(t, obs), 1, 3, cfg).first;
    return t.value(q_value(p, head, out, t.constant_ref(act), cfg)).storage();
  };
  CHECK(q(ps, "q1/") != q(ps, "q2/"));
  ParamSet<double> z = zeroed(ps);
  for (double v : q(z, "q1/")) CHECK(v == 0.0);
}

TEST_CASE("policy runner matches batched forward") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(10);
  auto ps = std::make_shared<const ParamSet<float>>(make_policy_params<float>(cfg, rng));
  std::vector<Observation> seq;
  for (int i = 0; i < 4; ++i) seq.push_back(sample_observation(cfg, rng));
  PolicyRunner runner(cfg, ps);
  std::vector<std::array<float, 2>> acts;
  for (const auto& o : seq) acts.push_back(runner.act(o));

  std::vector<const Observation*> rows;
  for (const auto& o : seq) rows.push_back(&o);
  ObsBatch<float> b = make_obs_batch<float>(rows, cfg);
  Tape<float> t(false);
  Binder<float> p(t, *ps, false);
  PolicyOut po = policy_head(p, run_torso(p, "policy/", bind_obs(t, b), 4, 1, cfg).first, cfg);
  for (int i = 0; i < 4; ++i) {
    CHECK(acts[static_cast<size_t>(i)][0] == doctest::Approx(std::tanh(t.value(po.mean)[2 * i])).epsilon(1e-5));
    CHECK(acts[static_cast<size_t>(i)][1] == doctest::Approx(std::tanh(t.value(po.mean)[2 * i + 1])).epsilon(1e-5));
  }
  runner.reset();
  CHECK(runner.act(seq[0]) == acts[0]);
}

TEST_CASE("layout manifest validation") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(11);
  ParamSet<float> ps = make_policy_params<float>(cfg, rng);
  nlohmann::json m = layout_manifest(ps);
  CHECK_NOTHROW(validate_layout(ps, m));
  NetConfig other = cfg;
  other.lstm_dim = 7;
  ParamSet<float> qs = make_policy_params<float>(other, rng);
  CHECK_THROWS(validate_layout(qs, m));
}

TEST_CASE("network gradients match central differences") {
  for (const auto& r : gradcheck::check_networks(12, 20)) {
    INFO(r.name, " checked=", r.fd.checked, " skipped=", r.fd.skipped);
    CHECK(r.fd.max_rel_error <= 1e-4);
    CHECK(r.fd.checked > 10 * r.fd.skipped);
  }
}

TEST_CASE("forward passes are finite over many initializations") {
  NetConfig cfg = gradcheck::tiny_net();
  std::mt19937_64 rng(13);
  for (int draw = 0; draw < 2000; ++draw) {
    ParamSet<double> pol = make_policy_params<double>(cfg, rng);
    ObsBatch<double> obs = gradcheck::random_obs(2, cfg, rng);
    Tape<double> t(false);
    Binder<double> p(t, pol, false);
    PolicyOut po = policy_head(p, run_torso(p, "policy/", bind_obs(t, obs), 1, 2, cfg).first, cfg);
    for (double v : t.value(po.mean).values()) REQUIRE(std::isfinite(v));
  }
}
