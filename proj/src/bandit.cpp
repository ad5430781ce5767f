#include "objnav/bandit.hpp"

#include <cmath>

namespace objnav {

namespace {

Observation bandit_observation(const NetConfig& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Observation o;
  o.lidar.resize(static_cast<size_t>(net.lidar_rays));
  for (auto& r : o.lidar) r = static_cast<float>(net.lidar_max_range) * u(rng);
  o.det.assign(static_cast<size_t>(net.det_bins), 0);
  o.goal[0] = 1.f;
  return o;
}

}  // namespace

BanditResult run_bandit(const BanditConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  SacConfig sc = cfg.sac;
  sc.batch_size = cfg.batch;
  sc.crop_len = 1;
  SacState<float> st = make_sac_state<float>(cfg.net, sc, rng());
  const Observation obs = bandit_observation(cfg.net, rng);

  const int b = cfg.batch;
  Batch<float> batch;
  batch.batch = b;
  batch.steps = 1;
  {
    std::vector<const Observation*> rows(static_cast<size_t>(2 * b), &obs);
    batch.obs = make_obs_batch<float>(rows, cfg.net);
  }
  batch.action = ad::Tensor<float>({b, 2});
  batch.reward = ad::Tensor<float>({b, 1});
  batch.done = ad::Tensor<float>({b, 1}, 1.f);
  batch.mask = ad::Tensor<float>({b, 1}, 1.f);

  std::uniform_real_distribution<float> uni(-1.f, 1.f);
  std::normal_distribution<float> nd;
  BanditResult res;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    auto shared = std::make_shared<const ParamSet<float>>(st.policy);
    PolicyRunner runner(cfg.net, shared);
    for (int i = 0; i < b; ++i) {
      std::array<float, 2> a;
      if (i % 2 == 0) {
        a = {uni(rng), uni(rng)};
      } else {
        runner.reset();
        const std::array<float, 2> n{nd(rng), nd(rng)};
        a = runner.act(obs, &n);
      }
      batch.action[static_cast<size_t>(2 * i)] = a[0];
      batch.action[static_cast<size_t>(2 * i + 1)] = a[1];
      const double d0 = a[0] - cfg.optimum[0], d1 = a[1] - cfg.optimum[1];
      batch.reward[static_cast<size_t>(i)] = static_cast<float>(-(d0 * d0 + d1 * d1));
    }
    train_step(st, batch, rng());

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      PolicyRunner eval(cfg.net, std::make_shared<const ParamSet<float>>(st.policy));
      const std::array<float, 2> a = eval.act(obs);
      res.action = {a[0], a[1]};
      res.distance = std::hypot(a[0] - cfg.optimum[0], a[1] - cfg.optimum[1]);
      res.steps = step;
      if (res.distance <= cfg.tolerance) {
        res.converged = true;
        return res;
      }
    }
  }
  return res;
}

}  // namespace objnav
