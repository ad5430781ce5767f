#include "objnav/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "objnav/sac.hpp"
#include "objnav/world.hpp"

namespace objnav::gradcheck {

double rel_error(double analytic, double numeric, double floor) {
  const double d = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / d;
}

ad::Tensor<double> random_tensor(ad::Shape s, std::mt19937_64& rng, double lo, double hi) {
  ad::Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

void FdResult::merge(const FdResult& o) {
  max_rel_error = std::max(max_rel_error, o.max_rel_error);
  checked += o.checked;
  skipped += o.skipped;
}

FdResult check_fn(const std::vector<ad::Tensor<double>*>& params, const std::vector<ad::Tensor<double>>& analytic,
                  const std::function<double()>& f, std::mt19937_64& rng, size_t per_tensor, double h) {
  ad::BranchProbe probe;
  auto eval = [&](uint64_t* sig) {
    probe.reset();
    const double v = f();
    *sig = probe.signature();
    return v;
  };
  uint64_t s0 = 0;
  eval(&s0);
  FdResult r;
  for (size_t p = 0; p < params.size(); ++p) {
    ad::Tensor<double>& t = *params[p];
    std::vector<size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    if (per_tensor && idx.size() > per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_tensor);
    }
    for (size_t i : idx) {
      const double orig = t[i];
      uint64_t sp = 0, sm = 0;
      t[i] = orig + h;
      const double fp = eval(&sp);
      t[i] = orig - h;
      const double fm = eval(&sm);
      t[i] = orig;
      if (sp != s0 || sm != s0) {
        ++r.skipped;
        continue;
      }
      ++r.checked;
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[p][i], (fp - fm) / (2 * h)));
    }
  }
  return r;
}

FdResult check_op(const Builder& build, std::vector<ad::Tensor<double>> inputs, std::mt19937_64& rng, double h) {
  ad::Tensor<double> weights;
  std::vector<ad::Tensor<double>> analytic;
  {
    ad::Tape<double> tape;
    std::vector<ad::Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.parameter(in));
    ad::Var y = build(tape, vars);
    weights = random_tensor(tape.shape(y), rng);
    ad::Var loss = ad::sum(tape, ad::mul(tape, y, tape.constant_ref(weights)));
    tape.backward(loss);
    for (ad::Var v : vars) analytic.push_back(tape.grad(v));
  }
  auto f = [&]() {
    ad::Tape<double> tape(false);
    std::vector<ad::Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.constant_ref(in));
    const ad::Tensor<double>& y = tape.value(build(tape, vars));
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
  };
  std::vector<ad::Tensor<double>*> ptrs;
  for (auto& in : inputs) ptrs.push_back(&in);
  return check_fn(ptrs, analytic, f, rng, 0, h);
}

NetConfig tiny_net() {
  NetConfig c;
  c.embed_dim = 6;
  c.lstm_dim = 5;
  c.head_hidden = 6;
  c.lidar_rays = 24;
  c.det_bins = 7;
  c.conv_channels = {2, 3, 3};
  c.conv_kernel = 3;
  c.conv_stride = 2;
  return c;
}

ObsBatch<double> random_obs(int rows, const NetConfig& cfg, std::mt19937_64& rng) {
  ObsBatch<double> o;
  o.rows = rows;
  o.lidar = random_tensor({rows, cfg.lidar_rays, 1}, rng, 0.0, 1.0);
  o.det = random_tensor({rows, cfg.det_bins}, rng, 0.0, 1.0);
  o.prev_action = random_tensor({rows, cfg.action_dim}, rng);
  o.collision = ad::Tensor<double>({rows, 1});
  o.goal = ad::Tensor<double>({rows, kNumLabels});
  std::uniform_int_distribution<int> label(0, kNumLabels - 1);
  std::bernoulli_distribution bump(0.3);
  for (int r = 0; r < rows; ++r) {
    o.collision[static_cast<size_t>(r)] = bump(rng) ? 1.0 : 0.0;
    o.goal[static_cast<size_t>(r * kNumLabels + label(rng))] = 1.0;
  }
  return o;
}

namespace {

using Rng = std::mt19937_64;

int pick(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Values with |v| >= margin away from every point in `kinks`.
ad::Tensor<double> away_from(ad::Shape s, Rng& rng, double lo, double hi, const std::vector<double>& kinks,
                             double margin) {
  ad::Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) {
    do {
      v = u(rng);
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < margin; }));
  }
  return t;
}

ad::Shape random_shape(Rng& rng, int max_rank = 3) {
  ad::Shape s(static_cast<size_t>(pick(rng, 1, max_rank)));
  for (auto& d : s) d = pick(rng, 1, 5);
  return s;
}

using Case = std::function<FdResult(Rng&)>;

std::vector<std::pair<std::string, Case>> primitive_cases() {
  std::vector<std::pair<std::string, Case>> cs;
  auto unary = [](auto op, double lo, double hi, std::vector<double> kinks = {}) {
    return [=](Rng& rng) {
      auto x = away_from(random_shape(rng), rng, lo, hi, kinks, 0.05);
      return check_op([op](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return op(t, v[0]); }, {x}, rng);
    };
  };
  auto binary = [](auto op) {
    return [=](Rng& rng) {
      ad::Shape s = random_shape(rng);
      return check_op([op](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return op(t, v[0], v[1]); },
                      {random_tensor(s, rng), random_tensor(s, rng)}, rng);
    };
  };

  cs.emplace_back("affine", [](Rng& rng) {
    const int n = pick(rng, 1, 5), i = pick(rng, 1, 6), o = pick(rng, 1, 6);
    return check_op([](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::affine(t, v[0], v[1], v[2]); },
                    {random_tensor({n, i}, rng), random_tensor({i, o}, rng), random_tensor({o}, rng)}, rng);
  });
  cs.emplace_back("matmul", [](Rng& rng) {
    const int n = pick(rng, 1, 5), i = pick(rng, 1, 6), o = pick(rng, 1, 6);
    return check_op([](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::matmul(t, v[0], v[1]); },
                    {random_tensor({n, i}, rng), random_tensor({i, o}, rng)}, rng);
  });
  cs.emplace_back("conv1d", [](Rng& rng) {
    const int n = pick(rng, 1, 3), k = pick(rng, 1, 4), l = k + pick(rng, 0, 8), ci = pick(rng, 1, 3),
              co = pick(rng, 1, 3), stride = pick(rng, 1, 3);
    return check_op(
        [stride](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::conv1d(t, v[0], v[1], v[2], stride); },
        {random_tensor({n, l, ci}, rng), random_tensor({k, ci, co}, rng), random_tensor({co}, rng)}, rng);
  });
  cs.emplace_back("tanh", unary([](auto& t, ad::Var x) { return ad::tanh(t, x); }, -2, 2));
  cs.emplace_back("relu", unary([](auto& t, ad::Var x) { return ad::relu(t, x); }, -1, 1, {0.0}));
  cs.emplace_back("sigmoid", unary([](auto& t, ad::Var x) { return ad::sigmoid(t, x); }, -3, 3));
  cs.emplace_back("exp", unary([](auto& t, ad::Var x) { return ad::exp(t, x); }, -2, 2));
  cs.emplace_back("log", unary([](auto& t, ad::Var x) { return ad::log(t, x); }, 0.2, 3));
  cs.emplace_back("square", unary([](auto& t, ad::Var x) { return ad::square(t, x); }, -2, 2));
  cs.emplace_back("scale", [](Rng& rng) {
    const double c = std::uniform_real_distribution<double>(-2, 2)(rng);
    const double d = std::uniform_real_distribution<double>(-1, 1)(rng);
    return check_op([c, d](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::scale(t, v[0], c, d); },
                    {random_tensor(random_shape(rng), rng)}, rng);
  });
  cs.emplace_back("clamp",
                  unary([](auto& t, ad::Var x) { return ad::clamp(t, x, -0.5, 0.5); }, -1, 1, {-0.5, 0.5}));
  cs.emplace_back("add", binary([](auto& t, ad::Var a, ad::Var b) { return ad::add(t, a, b); }));
  cs.emplace_back("sub", binary([](auto& t, ad::Var a, ad::Var b) { return ad::sub(t, a, b); }));
  cs.emplace_back("mul", binary([](auto& t, ad::Var a, ad::Var b) { return ad::mul(t, a, b); }));
  cs.emplace_back("min_elementwise", [](Rng& rng) {
    ad::Shape s = random_shape(rng);
    ad::Tensor<double> a = random_tensor(s, rng), b(s);
    std::uniform_real_distribution<double> gap(0.05, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (size_t i = 0; i < a.size(); ++i) b[i] = a[i] + (sign(rng) ? gap(rng) : -gap(rng));
    return check_op([](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::min_elementwise(t, v[0], v[1]); },
                    {a, b}, rng);
  });
  cs.emplace_back("sum", unary([](auto& t, ad::Var x) { return ad::sum(t, x); }, -1, 1));
  cs.emplace_back("mean", unary([](auto& t, ad::Var x) { return ad::mean(t, x); }, -1, 1));
  cs.emplace_back("sum_cols", [](Rng& rng) {
    return check_op([](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::sum_cols(t, v[0]); },
                    {random_tensor({pick(rng, 1, 5), pick(rng, 1, 5)}, rng)}, rng);
  });
  cs.emplace_back("concat", [](Rng& rng) {
    ad::Shape base = random_shape(rng);
    const int axis = pick(rng, 0, static_cast<int>(base.size()) - 1);
    std::vector<ad::Tensor<double>> parts;
    const int k = pick(rng, 1, 3);
    for (int i = 0; i < k; ++i) {
      ad::Shape s = base;
      s[static_cast<size_t>(axis)] = pick(rng, 1, 4);
      parts.push_back(random_tensor(s, rng));
    }
    return check_op([axis](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::concat(t, v, axis); },
                    parts, rng);
  });
  cs.emplace_back("slice", [](Rng& rng) {
    ad::Shape s = random_shape(rng);
    const int axis = pick(rng, 0, static_cast<int>(s.size()) - 1);
    const int n = s[static_cast<size_t>(axis)];
    const int b = pick(rng, 0, n - 1), e = pick(rng, b + 1, n);
    return check_op([=](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::slice(t, v[0], axis, b, e); },
                    {random_tensor(s, rng)}, rng);
  });
  cs.emplace_back("reshape", [](Rng& rng) {
    const int a = pick(rng, 1, 4), b = pick(rng, 1, 4), c = pick(rng, 1, 4);
    return check_op([=](ad::Tape<double>& t, const std::vector<ad::Var>& v) { return ad::reshape(t, v[0], {a * b, c}); },
                    {random_tensor({a, b, c}, rng)}, rng);
  });
  return cs;
}

std::vector<ad::Tensor<double>*> pointers(ParamSet<double>& ps) {
  std::vector<ad::Tensor<double>*> out;
  for (auto& e : ps) out.push_back(&e.value);
  return out;
}

/// Random weights so the loss mixes every output entry.
double weighted(const ad::Tensor<double>& y, const ad::Tensor<double>& w) {
  double s = 0;
  for (size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

ad::Var weighted(ad::Tape<double>& t, ad::Var y, const ad::Tensor<double>& w) {
  return ad::sum(t, ad::mul(t, y, t.constant_ref(w)));
}

/// Scales init up so activations land on both sides of relu kinks and gates saturate partially.
void perturb(ParamSet<double>& ps, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& e : ps) {
    for (auto& v : e.value.storage()) v = 1.5 * v + u(rng) * 0.3;
  }
}

FdResult embed_case(Rng& rng, size_t per_tensor) {
  const NetConfig cfg = tiny_net();
  ParamSet<double> ps;
  add_torso_params(ps, "", cfg, rng);
  perturb(ps, rng);
  const ObsBatch<double> obs = random_obs(3, cfg, rng);
  const ad::Tensor<double> w = random_tensor({3, cfg.embed_dim}, rng);
  std::vector<ad::Tensor<double>> analytic;
  {
    ad::Tape<double> t;
    Binder<double> p(t, ps, true);
    ObsVars<double> ov = bind_obs(t, obs);
    t.backward(weighted(t, embed_observation(p, "", ov, cfg).total, w));
    analytic = p.grads();
  }
  auto f = [&]() {
    ad::Tape<double> t(false);
    Binder<double> p(t, ps, false);
    ObsVars<double> ov = bind_obs(t, obs);
    return weighted(t.value(embed_observation(p, "", ov, cfg).total), w);
  };
  return check_fn(pointers(ps), analytic, f, rng, per_tensor);
}

FdResult bptt_case(Rng& rng, size_t per_tensor) {
  const NetConfig cfg = tiny_net();
  const int steps = 20, batch = 2;
  ParamSet<double> ps;
  add_torso_params(ps, "", cfg, rng);
  perturb(ps, rng);
  const ObsBatch<double> obs = random_obs(steps * batch, cfg, rng);
  // Weight only the last step so every gradient flows back through the recurrence.
  ad::Tensor<double> w({steps * batch, cfg.lstm_dim});
  const ad::Tensor<double> last = random_tensor({batch, cfg.lstm_dim}, rng);
  std::copy(last.storage().begin(), last.storage().end(), w.storage().end() - static_cast<long>(last.size()));
  std::vector<ad::Tensor<double>> analytic;
  {
    ad::Tape<double> t;
    Binder<double> p(t, ps, true);
    ObsVars<double> ov = bind_obs(t, obs);
    t.backward(weighted(t, run_torso(p, "", ov, steps, batch, cfg).first, w));
    analytic = p.grads();
  }
  auto f = [&]() {
    ad::Tape<double> t(false);
    Binder<double> p(t, ps, false);
    ObsVars<double> ov = bind_obs(t, obs);
    return weighted(t.value(run_torso(p, "", ov, steps, batch, cfg).first), w);
  };
  return check_fn(pointers(ps), analytic, f, rng, per_tensor);
}

FdResult policy_case(Rng& rng, size_t per_tensor) {
  const NetConfig cfg = tiny_net();
  const int steps = 3, batch = 2;
  ParamSet<double> ps = make_policy_params<double>(cfg, rng);
  perturb(ps, rng);
  const ObsBatch<double> obs = random_obs(steps * batch, cfg, rng);
  const ad::Tensor<double> noise = normal_noise<double>({steps * batch, cfg.action_dim}, rng);
  const ad::Tensor<double> wa = random_tensor({steps * batch, cfg.action_dim}, rng);
  const ad::Tensor<double> wl = random_tensor({steps * batch, 1}, rng);
  auto forward = [&](ad::Tape<double>& t, Binder<double>& p) {
    ObsVars<double> ov = bind_obs(t, obs);
    ad::Var out = run_torso(p, "policy/", ov, steps, batch, cfg).first;
    return policy_sample(t, policy_head(p, out, cfg), noise);
  };
  std::vector<ad::Tensor<double>> analytic;
  {
    ad::Tape<double> t;
    Binder<double> p(t, ps, true);
    PolicySample s = forward(t, p);
    t.backward(ad::add(t, weighted(t, s.action, wa), weighted(t, s.log_prob, wl)));
    analytic = p.grads();
  }
  auto f = [&]() {
    ad::Tape<double> t(false);
    Binder<double> p(t, ps, false);
    PolicySample s = forward(t, p);
    return weighted(t.value(s.action), wa) + weighted(t.value(s.log_prob), wl);
  };
  return check_fn(pointers(ps), analytic, f, rng, per_tensor);
}

FdResult q_case(Rng& rng, size_t per_tensor) {
  const NetConfig cfg = tiny_net();
  const int steps = 3, batch = 2, n = steps * batch;
  ParamSet<double> ps = make_critic_params<double>(cfg, rng);
  perturb(ps, rng);
  const int action_idx = ps.add("action", random_tensor({n, cfg.action_dim}, rng, -0.99, 0.99));
  const ObsBatch<double> obs = random_obs(n, cfg, rng);
  const ad::Tensor<double> w1 = random_tensor({n, 1}, rng), w2 = random_tensor({n, 1}, rng);
  auto forward = [&](ad::Tape<double>& t, Binder<double>& p) {
    ObsVars<double> ov = bind_obs(t, obs);
    ad::Var a = p("action");
    ad::Var q1 = q_value(p, "q1/", run_torso(p, "q1/", ov, steps, batch, cfg).first, a, cfg);
    ad::Var q2 = q_value(p, "q2/", run_torso(p, "q2/", ov, steps, batch, cfg).first, a, cfg);
    return std::pair{q1, q2};
  };
  std::vector<ad::Tensor<double>> analytic;
  {
    ad::Tape<double> t;
    Binder<double> p(t, ps, true);
    auto [q1, q2] = forward(t, p);
    t.backward(ad::add(t, weighted(t, q1, w1), weighted(t, q2, w2)));
    analytic = p.grads();
  }
  auto f = [&]() {
    ad::Tape<double> t(false);
    Binder<double> p(t, ps, false);
    auto [q1, q2] = forward(t, p);
    return weighted(t.value(q1), w1) + weighted(t.value(q2), w2);
  };
  FdResult r = check_fn(pointers(ps), analytic, f, rng, per_tensor);
  // Every action entry, not a sample.
  r.merge(check_fn({&ps[static_cast<size_t>(action_idx)].value}, {analytic[static_cast<size_t>(action_idx)]}, f, rng));
  return r;
}

/// Two sequences of three steps with random lengths and terminations.
Batch<double> random_batch(const NetConfig& cfg, Rng& rng, int batch = 2, int steps = 3) {
  Batch<double> b;
  b.batch = batch;
  b.steps = steps;
  b.obs = random_obs((steps + 1) * batch, cfg, rng);
  const int n = batch * steps;
  b.action = random_tensor({n, cfg.action_dim}, rng, -0.95, 0.95);
  b.reward = random_tensor({n, 1}, rng);
  b.done = ad::Tensor<double>({n, 1});
  b.mask = ad::Tensor<double>({n, 1});
  for (int s = 0; s < batch; ++s) {
    const int len = s == 0 ? steps : pick(rng, 1, steps);
    const bool terminal = std::bernoulli_distribution(0.5)(rng);
    for (int t = 0; t < len; ++t) b.mask[static_cast<size_t>(t * batch + s)] = 1;
    if (terminal) b.done[static_cast<size_t>((len - 1) * batch + s)] = 1;
  }
  return b;
}

FdResult critic_loss_case(Rng& rng, size_t per_tensor) {
  const NetConfig cfg = tiny_net();
  ParamSet<double> ps = make_critic_params<double>(cfg, rng);
  perturb(ps, rng);
  const Batch<double> b = random_batch(cfg, rng);
  const ad::Tensor<double> y = random_tensor({b.batch * b.steps, 1}, rng, -2, 2);
  const LossGrad<double> lg = critic_loss(ps, cfg, b, y);
  return check_fn(pointers(ps), lg.grads, [&]() { return critic_loss(ps, cfg, b, y).value; }, rng, per_tensor);
}

FdResult actor_loss_case(Rng& rng, size_t per_tensor) {
  const NetConfig cfg = tiny_net();
  ParamSet<double> policy = make_policy_params<double>(cfg, rng);
  ParamSet<double> critic = make_critic_params<double>(cfg, rng);
  perturb(policy, rng);
  perturb(critic, rng);
  const Batch<double> b = random_batch(cfg, rng);
  const double alpha = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
  const ad::Tensor<double> noise = normal_noise<double>({b.batch * b.steps, cfg.action_dim}, rng);
  const ActorLoss<double> lg = actor_loss(policy, critic, cfg, b, alpha, noise);
  return check_fn(pointers(policy), lg.grads,
                  [&]() { return actor_loss(policy, critic, cfg, b, alpha, noise).value; }, rng, per_tensor);
}

FdResult alpha_loss_case(Rng& rng, size_t) {
  const int n = 6;
  ad::Tensor<double> la({1}, std::uniform_real_distribution<double>(-3, 1)(rng));
  const ad::Tensor<double> lp = random_tensor({n, 1}, rng, -4, 4);
  ad::Tensor<double> mask({n, 1});
  const int len = pick(rng, 1, n);
  for (int i = 0; i < len; ++i) mask[static_cast<size_t>(i)] = 1;
  const double target = -2.0;
  const LossGrad<double> lg = alpha_loss(la[0], lp, mask, target);
  return check_fn({&la}, lg.grads, [&]() { return alpha_loss(la[0], lp, mask, target).value; }, rng);
}

Report run(const std::string& name, const std::function<FdResult(Rng&)>& c, Rng& rng, int instances) {
  Report r;
  r.name = name;
  for (int i = 0; i < instances; ++i) {
    r.fd.merge(c(rng));
    ++r.instances;
  }
  return r;
}

}  // namespace

std::vector<Report> check_primitives(uint64_t seed, int instances) {
  Rng rng(seed);
  std::vector<Report> out;
  for (const auto& [name, c] : primitive_cases()) out.push_back(run(name, c, rng, instances));
  return out;
}

std::vector<Report> check_networks(uint64_t seed, int instances, size_t per_tensor) {
  Rng rng(seed);
  auto bind = [per_tensor](FdResult (*fn)(Rng&, size_t)) { return [=](Rng& r) { return fn(r, per_tensor); }; };
  return {run("embed_observation", bind(embed_case), rng, instances),
          run("lstm_bptt_20", bind(bptt_case), rng, instances),
          run("policy_forward_sample", bind(policy_case), rng, instances),
          run("q_value", bind(q_case), rng, instances)};
}

std::vector<Report> check_losses(uint64_t seed, int instances, size_t per_tensor) {
  Rng rng(seed);
  auto bind = [per_tensor](FdResult (*fn)(Rng&, size_t)) { return [=](Rng& r) { return fn(r, per_tensor); }; };
  return {run("critic_loss", bind(critic_loss_case), rng, instances),
          run("actor_loss", bind(actor_loss_case), rng, instances),
          run("alpha_loss", bind(alpha_loss_case), rng, instances)};
}

}  // namespace objnav::gradcheck
