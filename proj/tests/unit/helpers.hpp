#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "objnav/autodiff.hpp"
#include "objnav/world.hpp"

inline constexpr double kPiTest() { return 3.14159265358979323846; }

namespace testutil {

/// Rectangular room of `rows` x `cols` cells with a one-cell wall border.
inline objnav::World room(int rows, int cols, double res, std::vector<objnav::LabeledObject> objects = {},
                          const std::string& name = "room") {
  std::vector<uint8_t> g(static_cast<size_t>(rows) * cols, 0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      if (i == 0 || j == 0 || i == rows - 1 || j == cols - 1) g[static_cast<size_t>(i) * cols + j] = 1;
    }
  }
  return objnav::World(name, res, rows, cols, std::move(g), std::move(objects));
}

/// Grid from strings; rows[0] is y = 0 ('#' occupied, anything else free).
inline objnav::World ascii(const std::vector<std::string>& rows, double res,
                           std::vector<objnav::LabeledObject> objects = {}, const std::string& name = "ascii") {
  const int r = static_cast<int>(rows.size());
  const int c = static_cast<int>(rows[0].size());
  std::vector<uint8_t> g(static_cast<size_t>(r) * c, 0);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) g[static_cast<size_t>(i) * c + j] = rows[i][j] == '#' ? 1 : 0;
  }
  return objnav::World(name, res, r, c, std::move(g), std::move(objects));
}

inline std::shared_ptr<const objnav::World> share(objnav::World w) {
  return std::make_shared<const objnav::World>(std::move(w));
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

/// Max relative error between analytic gradients and central differences of `f` w.r.t. `params`.
/// `f` must read the current values of the tensors in `params`.
inline double fd_check(const std::vector<objnav::ad::Tensor<double>*>& params,
                       const std::vector<objnav::ad::Tensor<double>>& analytic, const std::function<double()>& f,
                       double h = 1e-5, size_t max_per_tensor = 0, std::mt19937_64* rng = nullptr) {
  double worst = 0;
  for (size_t p = 0; p < params.size(); ++p) {
    auto& t = *params[p];
    std::vector<size_t> idx(t.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor && idx.size() > max_per_tensor && rng) {
      std::shuffle(idx.begin(), idx.end(), *rng);
      idx.resize(max_per_tensor);
    }
    for (size_t i : idx) {
      const double orig = t[i];
      t[i] = orig + h;
      const double fp = f();
      t[i] = orig - h;
      const double fm = f();
      t[i] = orig;
      const double num = (fp - fm) / (2 * h);
      worst = std::max(worst, rel_err(analytic[p][i], num));
    }
  }
  return worst;
}

}  // namespace testutil
