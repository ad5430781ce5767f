#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "objnav/autodiff.hpp"
#include "objnav/error.hpp"
#include "objnav/gradcheck.hpp"
#include "objnav/params.hpp"

using namespace objnav;
using ad::Tape;
using ad::Tensor;
using ad::Var;

TEST_CASE("tanh at zero") {
  Tape<double> t;
  Tensor<double> x({1}, 0.0);
  Var xv = t.parameter(x);
  Var y = ad::tanh(t, xv);
  CHECK(t.value(y)[0] == 0.0);
  t.backward(ad::sum(t, y));
  CHECK(t.grad(xv)[0] == doctest::Approx(1.0));
}

TEST_CASE("affine with identity weights") {
  Tape<double> t;
  Tensor<double> x({1, 2}, {1, 2}), w({2, 2}, {1, 0, 0, 1}), b({2}, {3, 4});
  Var y = ad::affine(t, t.constant_ref(x), t.constant_ref(w), t.constant_ref(b));
  CHECK(t.value(y)[0] == 4.0);
  CHECK(t.value(y)[1] == 6.0);
}

TEST_CASE("sum and mean of squares gradients") {
  {
    Tape<double> t;
    Tensor<double> x({3}, {0.5, -1, 2});
    Var xv = t.parameter(x);
    t.backward(ad::sum(t, xv));
    for (int i = 0; i < 3; ++i) CHECK(t.grad(xv)[i] == 1.0);
  }
  {
    Tape<double> t;
    Tensor<double> x({2}, {1, 2});
    Var xv = t.parameter(x);
    t.backward(ad::mean(t, ad::square(t, xv)));
    CHECK(t.grad(xv)[0] == doctest::Approx(1.0));
    CHECK(t.grad(xv)[1] == doctest::Approx(2.0));
  }
}

TEST_CASE("fan-out gradients accumulate") {
  Tape<double> t;
  Tensor<double> x({2}, {1.5, -0.5});
  Var xv = t.parameter(x);
  t.backward(ad::sum(t, ad::add(t, ad::mul(t, xv, xv), xv)));
  CHECK(t.grad(xv)[0] == doctest::Approx(4.0));
  CHECK(t.grad(xv)[1] == doctest::Approx(0.0));
}

TEST_CASE("non-scalar loss is rejected") {
  Tape<double> t;
  Tensor<double> x({2}, 1.0);
  Var xv = t.parameter(x);
  CHECK_THROWS_AS(t.backward(ad::tanh(t, xv)), ShapeError);
}

TEST_CASE("shape mismatch names the primitive and shapes") {
  Tape<double> t;
  Tensor<double> a({2, 3}), b({3, 2});
  try {
    ad::add(t, t.constant_ref(a), t.constant_ref(b));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::matmul(t, t.constant_ref(a), t.constant_ref(a)), ShapeError);
}

TEST_CASE("non-finite outputs raise") {
  Tape<double> t;
  Tensor<double> x({1}, -1.0);
  CHECK_THROWS_AS(ad::log(t, t.constant_ref(x)), NumericError);
}

TEST_CASE("backward leaves forward values intact and is linear in the loss") {
  std::mt19937_64 rng(3);
  Tensor<double> x = gradcheck::random_tensor({3, 4}, rng), w = gradcheck::random_tensor({4, 2}, rng);
  auto run = [&](double a, Tensor<double>* gx, Tensor<double>* y) {
    Tape<double> t;
    Var xv = t.parameter(x);
    Var out = ad::tanh(t, ad::matmul(t, xv, t.constant_ref(w)));
    const Tensor<double> before = t.value(out);
    t.backward(ad::scale(t, ad::sum(t, out), a));
    CHECK(t.value(out).storage() == before.storage());
    *gx = t.grad(xv);
    *y = before;
  };
  Tensor<double> g1, g3, y1, y3;
  run(1.0, &g1, &y1);
  run(3.0, &g3, &y3);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g3[i] == doctest::Approx(3.0 * g1[i]).epsilon(1e-14));
}

TEST_CASE("every primitive matches central differences") {
  for (const auto& r : gradcheck::check_primitives(11, 100)) {
    INFO(r.name);
    CHECK(r.instances == 100);
    CHECK(r.fd.skipped == 0);
    CHECK(r.fd.checked > 0);
    CHECK(r.fd.max_rel_error <= 1e-6);
  }
}

TEST_CASE("LSTM step loss matches central differences") {
  std::mt19937_64 rng(5);
  const int e = 4, h = 3, n = 2;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor<double>> in = {gradcheck::random_tensor({n, e}, rng), gradcheck::random_tensor({e, 4 * h}, rng),
                                      gradcheck::random_tensor({h, 4 * h}, rng), gradcheck::random_tensor({4 * h}, rng),
                                      gradcheck::random_tensor({n, h}, rng), gradcheck::random_tensor({n, h}, rng)};
    auto r = gradcheck::check_op(
        [h](Tape<double>& t, const std::vector<Var>& v) {
          Var pre = ad::add(t, ad::affine(t, v[0], v[1], v[3]), ad::matmul(t, v[4], v[2]));
          Var i = ad::sigmoid(t, ad::slice(t, pre, 1, 0, h));
          Var f = ad::sigmoid(t, ad::slice(t, pre, 1, h, 2 * h));
          Var g = ad::tanh(t, ad::slice(t, pre, 1, 2 * h, 3 * h));
          Var o = ad::sigmoid(t, ad::slice(t, pre, 1, 3 * h, 4 * h));
          Var c = ad::add(t, ad::mul(t, f, v[5]), ad::mul(t, i, g));
          return ad::mul(t, o, ad::tanh(t, c));
        },
        in, rng);
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("branch probe separates relu sides") {
  Tensor<double> a({2}, {0.5, -0.5}), b({2}, {0.5, 0.5});
  uint64_t sa = 0, sb = 0, sa2 = 0;
  {
    ad::BranchProbe p;
    Tape<double> t(false);
    ad::relu(t, t.constant_ref(a));
    sa = p.signature();
    p.reset();
    ad::relu(t, t.constant_ref(b));
    sb = p.signature();
    p.reset();
    ad::relu(t, t.constant_ref(a));
    sa2 = p.signature();
  }
  CHECK(sa != sb);
  CHECK(sa == sa2);
  CHECK(ad::BranchProbe::active() == nullptr);
}

TEST_CASE("adam first step and zero gradient") {
  ParamSet<double> ps;
  ps.add("x", Tensor<double>({1}, 2.0));
  AdamConfig cfg;
  cfg.lr = 0.1;
  auto st = AdamState<double>::zeros_like(ps);
  adam_step(ps, {Tensor<double>({1}, 1.0)}, st, cfg);
  CHECK(ps.at("x")[0] == doctest::Approx(2.0 - 0.1).epsilon(1e-7));
  CHECK(st.t == 1);

  ParamSet<double> qs;
  qs.add("y", Tensor<double>({2}, {1.0, -1.0}));
  auto st2 = AdamState<double>::zeros_like(qs);
  st2.m[0] = Tensor<double>({2}, 0.5);
  st2.v[0] = Tensor<double>({2}, 0.5);
  st2.t = 3;
  const double m_before = st2.m[0][0];
  adam_step(qs, {Tensor<double>({2}, 0.0)}, st2, cfg);
  CHECK(st2.m[0][0] == doctest::Approx(0.9 * m_before));
  CHECK(std::abs(st2.m[0][0]) < m_before);
  CHECK(st2.t == 4);

  ParamSet<double> zs;
  zs.add("z", Tensor<double>({2}, {1.0, -1.0}));
  auto st3 = AdamState<double>::zeros_like(zs);
  adam_step(zs, {Tensor<double>({2}, 0.0)}, st3, cfg);
  CHECK(zs.at("z")[0] == 1.0);
  CHECK(zs.at("z")[1] == -1.0);
}

TEST_CASE("adam is deterministic and checks shapes") {
  auto run = [] {
    ParamSet<float> ps;
    ps.add("w", Tensor<float>({3}, {0.1f, 0.2f, 0.3f}));
    auto st = AdamState<float>::zeros_like(ps);
    for (int i = 0; i < 5; ++i) adam_step(ps, {Tensor<float>({3}, {0.3f, -0.1f, 1.0f})}, st, AdamConfig{});
    return ps.at("w").storage();
  };
  CHECK(run() == run());
  ParamSet<float> ps;
  ps.add("w", Tensor<float>({3}));
  auto st = AdamState<float>::zeros_like(ps);
  CHECK_THROWS_AS(adam_step(ps, {Tensor<float>({2})}, st, AdamConfig{}), ShapeError);
}

TEST_CASE("polyak update") {
  ParamSet<double> tgt, on;
  tgt.add("w", Tensor<double>({2}, 0.0));
  on.add("w", Tensor<double>({2}, 1.0));
  polyak_update(tgt, on, 0.005);
  CHECK(tgt.at("w")[0] == doctest::Approx(0.005));
  double gap = 1.0 - tgt.at("w")[0];
  for (int i = 0; i < 10; ++i) {
    polyak_update(tgt, on, 0.005);
    const double g = 1.0 - tgt.at("w")[0];
    CHECK(g == doctest::Approx(gap * 0.995));
    gap = g;
  }
  polyak_update(tgt, on, 1.0);
  CHECK(tgt.at("w")[1] == 1.0);
}

TEST_CASE("checkpoint round trip and corruption") {
  ParamSet<float> ps;
  ps.add("a/w", Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
  ps.add("b", Tensor<float>({1}, {-0.5f}));
  const std::string bytes = encode_checkpoint(ps);
  CHECK(bytes.substr(0, 8) == "OSACPARM");
  uint32_t version = 0;
  ParamSet<float> back = decode_checkpoint(bytes, &version);
  CHECK(version == 1);
  CHECK(back.checksum() == ps.checksum());
  CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(decode_checkpoint(bad));
}
