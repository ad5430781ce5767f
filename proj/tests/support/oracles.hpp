#pragma once

// Independent reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <bit>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <cstring>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "objnav/error.hpp"
#include "objnav/replay.hpp"
#include "objnav/sim.hpp"
#include "objnav/world.hpp"

namespace oracle {

using namespace objnav;

inline constexpr int kRays = 6;
inline constexpr int kBins = 4;

inline Pose euler(Pose p, Twist a, double dt, int n) {
  const double h = dt / n;
  double x = p.x, y = p.y, th = p.theta;
  for (int k = 0; k < n; ++k) {
    // midpoint rule on heading keeps the oracle second-order
    const double mid = th + 0.5 * h * a.w;
    x += h * a.v * std::cos(mid);
    y += h * a.v * std::sin(mid);
    th += h * a.w;
  }
  return {x, y, normalize_angle(th)};
}

inline bool oracle_navigable_center(const World& w, int i, int j, double radius) {
  const double res = w.resolution();
  const double x = (j + 0.5) * res, y = (i + 0.5) * res;
  if (x - radius < 0 || y - radius < 0 || x + radius > w.width() || y + radius > w.height()) return false;
  auto rect_dist = [&](double x0, double y0, double x1, double y1) {
    const double ddx = std::max({x0 - x, 0.0, x - x1});
    const double ddy = std::max({y0 - y, 0.0, y - y1});
    return std::sqrt(ddx * ddx + ddy * ddy);
  };
  for (int a = 0; a < w.rows(); ++a) {
    for (int b = 0; b < w.cols(); ++b) {
      if (w.occupied(a, b) && rect_dist(b * res, a * res, (b + 1) * res, (a + 1) * res) < radius) return false;
    }
  }
  for (const auto& o : w.objects()) {
    if (rect_dist(o.box.min_x, o.box.min_y, o.box.max_x, o.box.max_y) < radius) return false;
  }
  return true;
}

// Label-correcting shortest paths (FIFO queue), independent of the library's heap Dijkstra.
inline std::vector<double> oracle_geodesic(const World& w, int obj_id, double success_radius, double robot_radius) {
  const int R = w.rows(), C = w.cols();
  const double res = w.resolution();
  std::vector<char> nav(static_cast<size_t>(R) * C);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) nav[i * C + j] = !w.occupied(i, j) && oracle_navigable_center(w, i, j, robot_radius);
  const Box& box = w.find_object(obj_id)->box;
  std::vector<double> d(nav.size(), GeodesicField::kInf);
  std::deque<int> q;
  std::vector<char> inq(nav.size(), 0);
  for (int i = 0; i < R; ++i) {
    for (int j = 0; j < C; ++j) {
      if (nav[i * C + j] && box.distance_to((j + 0.5) * res, (i + 0.5) * res) <= success_radius) {
        d[i * C + j] = 0;
        q.push_back(i * C + j);
        inq[i * C + j] = 1;
      }
    }
  }
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    inq[u] = 0;
    int i = u / C, j = u % C;
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        if (!di && !dj) continue;
        int a = i + di, b = j + dj;
        if (a < 0 || b < 0 || a >= R || b >= C || !nav[a * C + b]) continue;
        double nd = d[u] + ((di && dj) ? res * std::sqrt(2.0) : res);
        if (nd < d[a * C + b] - 1e-12) {
          d[a * C + b] = nd;
          if (!inq[a * C + b]) {
            q.push_back(a * C + b);
            inq[a * C + b] = 1;
          }
        }
      }
    }
  }
  return d;
}

inline World random_world64(std::mt19937_64& rng) {
  const int n = 64;
  for (;;) {
    std::vector<uint8_t> g(n * n, 0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i == 0 || j == 0 || i == n - 1 || j == n - 1) g[i * n + j] = 1;
    std::uniform_int_distribution<int> pos(1, n - 2), len(2, 20), thick(1, 2);
    const int walls = std::uniform_int_distribution<int>(3, 10)(rng);
    for (int k = 0; k < walls; ++k) {
      const bool horiz = rng() & 1;
      const int i0 = pos(rng), j0 = pos(rng), L = len(rng), T = thick(rng);
      for (int a = 0; a < (horiz ? T : L); ++a)
        for (int b = 0; b < (horiz ? L : T); ++b) {
          int i = i0 + a, j = j0 + b;
          if (i < n - 1 && j < n - 1) g[i * n + j] = 1;
        }
    }
    // Object on a free 4x4 patch.
    for (int tries = 0; tries < 200; ++tries) {
      int i = std::uniform_int_distribution<int>(2, n - 7)(rng);
      int j = std::uniform_int_distribution<int>(2, n - 7)(rng);
      bool ok = true;
      for (int a = -1; a <= 4 && ok; ++a)
        for (int b = -1; b <= 4 && ok; ++b) ok = !g[(i + a) * n + (j + b)];
      if (!ok) continue;
      const double res = 0.1;
      std::vector<LabeledObject> objs{{1, Label::chair, {(j + 0.5) * res, (i + 0.5) * res, (j + 3.5) * res, (i + 3.5) * res}}};
      World w("rand64", res, n, n, g, objs);
      try {
        geodesic_field(w, 1, 1.0, 0.18);
      } catch (const InvariantError&) {
        continue;
      }
      return w;
    }
  }
}

/// Unroll whose observation at step t carries t in its first lidar ray.
inline Unroll make_unroll(int L, uint64_t id, bool terminal, std::mt19937_64* rng = nullptr) {
  Unroll u;
  u.episode_id = id;
  u.policy_version = id * 3;
  u.world = "w" + std::to_string(id % 7);
  u.goal = static_cast<Label>(id % kNumLabels);
  std::uniform_real_distribution<float> uni(-1.f, 1.f);
  for (int t = 0; t <= L; ++t) {
    Observation o;
    o.lidar.assign(kRays, 1.0f);
    o.lidar[0] = static_cast<float>(t) / 100.f;
    o.det.assign(kBins, 0);
    o.det[static_cast<size_t>(t % kBins)] = 1;
    o.goal[static_cast<size_t>(u.goal)] = 1.f;
    if (rng) {
      for (auto& r : o.lidar) r = 5.f * (uni(*rng) + 1.f) / 2.f;
      o.prev_action = {uni(*rng), uni(*rng)};
      o.collision = uni(*rng) > 0 ? 1 : 0;
    }
    u.obs.push_back(o);
  }
  for (int t = 0; t < L; ++t) {
    u.action.push_back({rng ? uni(*rng) : 0.1f * static_cast<float>(t % 10), rng ? uni(*rng) : -0.5f});
    u.reward.push_back(rng ? uni(*rng) : static_cast<float>(t));
    u.done.push_back(terminal && t == L - 1 ? 1 : 0);
  }
  return u;
}

inline double chi_square_p(const std::vector<double>& observed, const std::vector<double>& expected) {
  double stat = 0;
  for (size_t i = 0; i < observed.size(); ++i) stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

/// One random message of any type.
inline Message random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 8);
  Message m;
  switch (kind(rng)) {
    case 0:
      m = MsgAddUnroll{make_unroll(1 + static_cast<int>(rng() % 100), rng(), rng() % 2, &rng)};
      break;
    case 1:
      m = MsgSampleRequest{static_cast<uint32_t>(rng()), rng()};
      break;
    case 2: {
      std::vector<Unroll> us;
      const int n = 1 + static_cast<int>(rng() % 4);
      for (int k = 0; k < n; ++k) us.push_back(make_unroll(1 + static_cast<int>(rng() % 30), rng(), rng() % 2, &rng));
      std::vector<const Unroll*> ptrs;
      std::vector<int> starts;
      SampleTrace tr;
      for (const auto& u : us) {
        ptrs.push_back(&u);
        const int s = static_cast<int>(rng() % static_cast<uint64_t>(std::max(1, u.length() - 5)));
        starts.push_back(s);
        tr.anchor.push_back(static_cast<int64_t>(rng() % 100000));
        tr.start.push_back(s);
        tr.episode.push_back(u.episode_id);
      }
      m = MsgSampleResponse{assemble_batch(ptrs, starts, 5, 5.0), tr};
      break;
    }
    case 3:
      m = MsgFetchWeights{rng()};
      break;
    case 4: {
      MsgWeightsResponse w;
      w.version = rng();
      w.modified = rng() % 2;
      const int n = static_cast<int>(rng() % 5);
      for (int k = 0; k < n; ++k) {
        ad::Tensor<float> t({1 + static_cast<int>(rng() % 4), 1 + static_cast<int>(rng() % 4)});
        for (auto& v : t.storage()) {
          const uint32_t bits = static_cast<uint32_t>(rng()) & 0xFF7FFFFFu;  // finite, any sign
          std::memcpy(&v, &bits, 4);
        }
        w.params.add("p" + std::to_string(k), t);
      }
      m = w;
      break;
    }
    case 5:
      m = MsgStats{};
      break;
    case 6:
      m = MsgStatsResponse{{rng(), rng(), rng(), rng(), rng(), rng(), std::bit_cast<double>(rng())}, rng()};
      break;
    case 7:
      m = MsgAck{};
      break;
    default: {
      std::string reason(rng() % 64, 'a');
      for (auto& ch : reason) ch = static_cast<char>(rng() % 256);
      m = MsgError{reason};
    }
  }
  return m;
}

}  // namespace oracle
