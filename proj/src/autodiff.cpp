#include "objnav/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "objnav/error.hpp"

namespace objnav::ad {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

size_t shape_size(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= static_cast<size_t>(d);
  }
  return n;
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <class T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& data)
    : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}

template <class T>
Tensor<T>::Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

template <class T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using CMapM = Eigen::Map<const Mat<T>>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": shape mismatch " + detail);
}

template <class T>
void require_same(const Tape<T>& t, Var a, Var b, const char* op) {
  if (t.shape(a) != t.shape(b)) shape_fail(op, shape_str(t.shape(a)) + " vs " + shape_str(t.shape(b)));
}

template <class T, class F, class G>
Var unary(Tape<T>& t, Var x, const char* op, F forward, G deriv) {
  const Tensor<T>& xv = t.value(x);
  Tensor<T> y(xv.shape());
  for (size_t i = 0; i < xv.size(); ++i) y[i] = forward(xv[i]);
  check_finite(y, op);
  return t.push(std::move(y), {x.id}, [deriv](Tape<T>& tp, int self) {
    int in = tp.input(self, 0);
    if (!tp.requires_grad(Var{in})) return;
    const Tensor<T>& g = tp.grad_ref(self);
    const Tensor<T>& xv = tp.value(Var{in});
    const Tensor<T>& yv = tp.value(Var{self});
    Tensor<T>& gx = tp.grad_buffer(in);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  }, op);
}

}  // namespace

// ---------------------------------------------------------------------------
// BranchProbe

namespace {
thread_local BranchProbe* g_probe = nullptr;
}

BranchProbe::BranchProbe() : prev_(g_probe) { g_probe = this; }
BranchProbe::~BranchProbe() { g_probe = prev_; }
BranchProbe* BranchProbe::active() { return g_probe; }

// ---------------------------------------------------------------------------
// Tape

template <class T>
Var Tape<T>::push(Tensor<T> value, std::vector<int> inputs, BackwardFn fn, const char* op) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (record_) {
    for (int in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
  }
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::constant_ref(const Tensor<T>& value) {
  Node n;
  n.borrowed = &value;
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::parameter(const Tensor<T>& value) {
  Node n;
  n.borrowed = &value;
  n.op = "parameter";
  n.is_parameter = true;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
const Tensor<T>& Tape<T>::value(Var v) const {
  const Node& n = nodes_.at(static_cast<size_t>(v.id));
  return n.borrowed ? *n.borrowed : n.value;
}

template <class T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<size_t>(v.id));
  if (n.grad.size() == 0 && value(v).size() != 0) return Tensor<T>(value(v).shape());
  return n.grad;
}

template <class T>
bool Tape<T>::has_grad(Var v) const {
  return nodes_.at(static_cast<size_t>(v.id)).grad.size() != 0;
}

template <class T>
Tensor<T>& Tape<T>::grad_buffer(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() == 0) n.grad = Tensor<T>(value(Var{id}).shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var loss) {
  if (!record_) throw Error("backward: tape was built without recording");
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(value(loss).shape()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] += T(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var matmul(Tape<T>& t, Var x, Var w) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& wv = t.value(w);
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(0)) {
    shape_fail("matmul", "x " + shape_str(xv.shape()) + " w " + shape_str(wv.shape()));
  }
  const int n = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  Tensor<T> y({n, out});
  MapM<T>(y.data(), n, out).noalias() = CMapM<T>(xv.data(), n, in) * CMapM<T>(wv.data(), in, out);
  check_finite(y, "matmul");
  return t.push(std::move(y), {x.id, w.id}, [n, in, out](Tape<T>& tp, int self) {
    const int xi = tp.input(self, 0), wi = tp.input(self, 1);
    CMapM<T> g(tp.grad_ref(self).data(), n, out);
    if (tp.requires_grad(Var{xi})) {
      MapM<T>(tp.grad_buffer(xi).data(), n, in).noalias() +=
          g * CMapM<T>(tp.value(Var{wi}).data(), in, out).transpose();
    }
    if (tp.requires_grad(Var{wi})) {
      MapM<T>(tp.grad_buffer(wi).data(), in, out).noalias() +=
          CMapM<T>(tp.value(Var{xi}).data(), n, in).transpose() * g;
    }
  }, "matmul");
}

template <class T>
Var affine(Tape<T>& t, Var x, Var w, Var b) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& wv = t.value(w);
  const Tensor<T>& bv = t.value(b);
  if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1 || xv.dim(1) != wv.dim(0) ||
      bv.dim(0) != wv.dim(1)) {
    shape_fail("affine", "x " + shape_str(xv.shape()) + " w " + shape_str(wv.shape()) + " b " +
                             shape_str(bv.shape()));
  }
  const int n = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  Tensor<T> y({n, out});
  MapM<T> ym(y.data(), n, out);
  ym.noalias() = CMapM<T>(xv.data(), n, in) * CMapM<T>(wv.data(), in, out);
  ym.rowwise() += Eigen::Map<const RowVec<T>>(bv.data(), out);
  check_finite(y, "affine");
  return t.push(std::move(y), {x.id, w.id, b.id}, [n, in, out](Tape<T>& tp, int self) {
    const int xi = tp.input(self, 0), wi = tp.input(self, 1), bi = tp.input(self, 2);
    CMapM<T> g(tp.grad_ref(self).data(), n, out);
    if (tp.requires_grad(Var{xi})) {
      MapM<T>(tp.grad_buffer(xi).data(), n, in).noalias() +=
          g * CMapM<T>(tp.value(Var{wi}).data(), in, out).transpose();
    }
    if (tp.requires_grad(Var{wi})) {
      MapM<T>(tp.grad_buffer(wi).data(), in, out).noalias() +=
          CMapM<T>(tp.value(Var{xi}).data(), n, in).transpose() * g;
    }
    if (tp.requires_grad(Var{bi})) {
      Eigen::Map<RowVec<T>>(tp.grad_buffer(bi).data(), out) += g.colwise().sum();
    }
  }, "affine");
}

template <class T>
Mat<T> im2col(const T* x, int n, int len, int cin, int lout, int patch, int stride) {
  Mat<T> cols(static_cast<Eigen::Index>(n) * lout, patch);
  for (int s = 0; s < n; ++s) {
    for (int l = 0; l < lout; ++l) {
      const T* src = x + (static_cast<size_t>(s) * len + static_cast<size_t>(l) * stride) * cin;
      std::copy(src, src + patch, cols.data() + (static_cast<size_t>(s) * lout + l) * patch);
    }
  }
  return cols;
}

template <class T>
Var conv1d(Tape<T>& t, Var x, Var kernel, Var bias, int stride) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& kv = t.value(kernel);
  const Tensor<T>& bv = t.value(bias);
  if (xv.ndim() != 3 || kv.ndim() != 3 || bv.ndim() != 1 || kv.dim(1) != xv.dim(2) ||
      bv.dim(0) != kv.dim(2) || stride < 1 || xv.dim(1) < kv.dim(0)) {
    shape_fail("conv1d", "x " + shape_str(xv.shape()) + " kernel " + shape_str(kv.shape()) +
                             " bias " + shape_str(bv.shape()) + " stride " + std::to_string(stride));
  }
  const int n = xv.dim(0), len = xv.dim(1), cin = xv.dim(2);
  const int k = kv.dim(0), cout = kv.dim(2);
  const int lout = (len - k) / stride + 1;
  const int patch = k * cin;
  Tensor<T> y({n, lout, cout});
  CMapM<T> km(kv.data(), patch, cout);
  // One GEMM over all samples on gathered patches.
  Mat<T> cols = im2col(xv.data(), n, len, cin, lout, patch, stride);
  MapM<T> ym(y.data(), n * lout, cout);
  ym.noalias() = cols * km;
  ym.rowwise() += Eigen::Map<const RowVec<T>>(bv.data(), cout);
  check_finite(y, "conv1d");
  return t.push(std::move(y), {x.id, kernel.id, bias.id},
                [n, len, cin, cout, lout, patch, stride](Tape<T>& tp, int self) {
    const int xi = tp.input(self, 0), ki = tp.input(self, 1), bi = tp.input(self, 2);
    CMapM<T> g(tp.grad_ref(self).data(), n * lout, cout);
    const Tensor<T>& xv = tp.value(Var{xi});
    const Tensor<T>& kv = tp.value(Var{ki});
    if (tp.requires_grad(Var{ki})) {
      Mat<T> cols = im2col(xv.data(), n, len, cin, lout, patch, stride);
      MapM<T>(tp.grad_buffer(ki).data(), patch, cout).noalias() += cols.transpose() * g;
    }
    if (tp.requires_grad(Var{xi})) {
      Mat<T> dp = g * CMapM<T>(kv.data(), patch, cout).transpose();
      T* gx = tp.grad_buffer(xi).data();
      for (int s = 0; s < n; ++s) {
        for (int l = 0; l < lout; ++l) {
          T* dst = gx + (static_cast<size_t>(s) * len + static_cast<size_t>(l) * stride) * cin;
          const T* src = dp.data() + (static_cast<size_t>(s) * lout + l) * patch;
          for (int q = 0; q < patch; ++q) dst[q] += src[q];
        }
      }
    }
    if (tp.requires_grad(Var{bi})) {
      Eigen::Map<RowVec<T>>(tp.grad_buffer(bi).data(), cout) += g.colwise().sum();
    }
  }, "conv1d");
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var tanh(Tape<T>& t, Var x) {
  return unary(t, x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
void probe_branches(const Tensor<T>& x, T lo, T hi) {
  BranchProbe* p = BranchProbe::active();
  if (!p) return;
  for (T v : x.values()) p->mix(static_cast<uint8_t>((v > lo ? 1 : 0) | (v < hi ? 2 : 0)));
}

template <class T>
Var relu(Tape<T>& t, Var x) {
  probe_branches(t.value(x), T(0), std::numeric_limits<T>::infinity());
  return unary(t, x, "relu", [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var sigmoid(Tape<T>& t, Var x) {
  return unary(t, x, "sigmoid",
               [](T v) {
                 if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
                 T e = std::exp(v);
                 return e / (T(1) + e);
               },
               [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var exp(Tape<T>& t, Var x) {
  return unary(t, x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Var log(Tape<T>& t, Var x) {
  return unary(t, x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Var square(Tape<T>& t, Var x) {
  return unary(t, x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Var scale(Tape<T>& t, Var a, T c, T d) {
  return unary(t, a, "scale", [c, d](T v) { return v * c + d; }, [c](T, T) { return c; });
}

template <class T>
Var clamp(Tape<T>& t, Var x, T lo, T hi) {
  probe_branches(t.value(x), lo, hi);
  return unary(t, x, "clamp", [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
               [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  require_same(t, a, b, "add");
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  Tensor<T> y(av.shape());
  for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  check_finite(y, "add");
  return t.push(std::move(y), {a.id, b.id}, [](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad_ref(self);
    for (size_t k = 0; k < 2; ++k) {
      int in = tp.input(self, k);
      if (!tp.requires_grad(Var{in})) continue;
      Tensor<T>& gi = tp.grad_buffer(in);
      for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  }, "add");
}

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
  require_same(t, a, b, "sub");
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  Tensor<T> y(av.shape());
  for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  check_finite(y, "sub");
  return t.push(std::move(y), {a.id, b.id}, [](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad_ref(self);
    int ai = tp.input(self, 0), bi = tp.input(self, 1);
    if (tp.requires_grad(Var{ai})) {
      Tensor<T>& ga = tp.grad_buffer(ai);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(Var{bi})) {
      Tensor<T>& gb = tp.grad_buffer(bi);
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  }, "sub");
}

template <class T>
Var mul(Tape<T>& t, Var a, Var b) {
  require_same(t, a, b, "mul");
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  Tensor<T> y(av.shape());
  for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  check_finite(y, "mul");
  return t.push(std::move(y), {a.id, b.id}, [](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad_ref(self);
    int ai = tp.input(self, 0), bi = tp.input(self, 1);
    if (tp.requires_grad(Var{ai})) {
      const Tensor<T>& bv = tp.value(Var{bi});
      Tensor<T>& ga = tp.grad_buffer(ai);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(Var{bi})) {
      const Tensor<T>& av = tp.value(Var{ai});
      Tensor<T>& gb = tp.grad_buffer(bi);
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  }, "mul");
}

template <class T>
Var min_elementwise(Tape<T>& t, Var a, Var b) {
  require_same(t, a, b, "min_elementwise");
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  Tensor<T> y(av.shape());
  for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] <= bv[i] ? av[i] : bv[i];
  check_finite(y, "min_elementwise");
  if (BranchProbe* p = BranchProbe::active()) {
    for (size_t i = 0; i < y.size(); ++i) p->mix(av[i] <= bv[i] ? 1 : 0);
  }
  return t.push(std::move(y), {a.id, b.id}, [](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad_ref(self);
    int ai = tp.input(self, 0), bi = tp.input(self, 1);
    const Tensor<T>& av = tp.value(Var{ai});
    const Tensor<T>& bv = tp.value(Var{bi});
    const bool ga_on = tp.requires_grad(Var{ai});
    const bool gb_on = tp.requires_grad(Var{bi});
    for (size_t i = 0; i < g.size(); ++i) {
      if (av[i] <= bv[i]) {
        if (ga_on) tp.grad_buffer(ai)[i] += g[i];
      } else if (gb_on) {
        tp.grad_buffer(bi)[i] += g[i];
      }
    }
  }, "min_elementwise");
}

// ---------------------------------------------------------------------------
// Reductions and layout

template <class T>
Var sum(Tape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  T s = T(0);
  for (T v : xv.values()) s += v;
  Tensor<T> y = Tensor<T>::scalar(s);
  check_finite(y, "sum");
  return t.push(std::move(y), {x.id}, [](Tape<T>& tp, int self) {
    int in = tp.input(self, 0);
    if (!tp.requires_grad(Var{in})) return;
    T g = tp.grad_ref(self)[0];
    Tensor<T>& gx = tp.grad_buffer(in);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  }, "sum");
}

template <class T>
Var mean(Tape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  if (xv.size() == 0) throw ShapeError("mean: empty tensor");
  const T inv = T(1) / static_cast<T>(xv.size());
  T s = T(0);
  for (T v : xv.values()) s += v;
  Tensor<T> y = Tensor<T>::scalar(s * inv);
  check_finite(y, "mean");
  return t.push(std::move(y), {x.id}, [inv](Tape<T>& tp, int self) {
    int in = tp.input(self, 0);
    if (!tp.requires_grad(Var{in})) return;
    T g = tp.grad_ref(self)[0] * inv;
    Tensor<T>& gx = tp.grad_buffer(in);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  }, "mean");
}

template <class T>
Var sum_cols(Tape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  if (xv.ndim() != 2) shape_fail("sum_cols", shape_str(xv.shape()));
  const int n = xv.dim(0), m = xv.dim(1);
  Tensor<T> y({n, 1});
  for (int i = 0; i < n; ++i) {
    T s = T(0);
    for (int j = 0; j < m; ++j) s += xv[static_cast<size_t>(i) * m + j];
    y[i] = s;
  }
  check_finite(y, "sum_cols");
  return t.push(std::move(y), {x.id}, [n, m](Tape<T>& tp, int self) {
    int in = tp.input(self, 0);
    if (!tp.requires_grad(Var{in})) return;
    const Tensor<T>& g = tp.grad_ref(self);
    Tensor<T>& gx = tp.grad_buffer(in);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) gx[static_cast<size_t>(i) * m + j] += g[i];
    }
  }, "sum_cols");
}

namespace {

struct AxisLayout {
  size_t outer = 1;
  size_t inner = 1;
};

AxisLayout axis_layout(const Shape& s, int axis) {
  AxisLayout l;
  for (int i = 0; i < axis; ++i) l.outer *= static_cast<size_t>(s[i]);
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) l.inner *= static_cast<size_t>(s[i]);
  return l;
}

}  // namespace

template <class T>
Var concat(Tape<T>& t, const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = t.shape(parts[0]);
  if (axis < 0 || axis >= static_cast<int>(s0.size())) {
    shape_fail("concat", "axis " + std::to_string(axis) + " for " + shape_str(s0));
  }
  Shape out = s0;
  out[axis] = 0;
  std::vector<int> lens;
  for (Var p : parts) {
    const Shape& s = t.shape(p);
    bool ok = s.size() == s0.size();
    for (size_t i = 0; ok && i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != s0[i]) ok = false;
    }
    if (!ok) shape_fail("concat", shape_str(s0) + " vs " + shape_str(s));
    lens.push_back(s[axis]);
    out[axis] += s[axis];
  }
  const AxisLayout lay = axis_layout(out, axis);
  const size_t out_row = static_cast<size_t>(out[axis]) * lay.inner;
  Tensor<T> y(out);
  size_t offset = 0;
  std::vector<int> ids;
  for (size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = t.value(parts[k]);
    const size_t chunk = static_cast<size_t>(lens[k]) * lay.inner;
    for (size_t o = 0; o < lay.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk, y.data() + o * out_row + offset);
    }
    offset += chunk;
    ids.push_back(parts[k].id);
  }
  return t.push(std::move(y), std::move(ids), [lens, lay, out_row](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad_ref(self);
    size_t offset = 0;
    for (size_t k = 0; k < lens.size(); ++k) {
      const size_t chunk = static_cast<size_t>(lens[k]) * lay.inner;
      int in = tp.input(self, k);
      if (tp.requires_grad(Var{in})) {
        Tensor<T>& gi = tp.grad_buffer(in);
        for (size_t o = 0; o < lay.outer; ++o) {
          const T* src = g.data() + o * out_row + offset;
          T* dst = gi.data() + o * chunk;
          for (size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += chunk;
    }
  }, "concat");
}

template <class T>
Var slice(Tape<T>& t, Var x, int axis, int begin, int end) {
  const Shape& s = t.shape(x);
  if (axis < 0 || axis >= static_cast<int>(s.size()) || begin < 0 || end > s[axis] || begin >= end) {
    shape_fail("slice", shape_str(s) + " axis " + std::to_string(axis) + " [" +
                            std::to_string(begin) + "," + std::to_string(end) + ")");
  }
  Shape out = s;
  out[axis] = end - begin;
  const AxisLayout lay = axis_layout(s, axis);
  const size_t in_row = static_cast<size_t>(s[axis]) * lay.inner;
  const size_t chunk = static_cast<size_t>(end - begin) * lay.inner;
  const size_t offset = static_cast<size_t>(begin) * lay.inner;
  const Tensor<T>& xv = t.value(x);
  Tensor<T> y(out);
  for (size_t o = 0; o < lay.outer; ++o) {
    std::copy_n(xv.data() + o * in_row + offset, chunk, y.data() + o * chunk);
  }
  return t.push(std::move(y), {x.id}, [lay, in_row, chunk, offset](Tape<T>& tp, int self) {
    int in = tp.input(self, 0);
    if (!tp.requires_grad(Var{in})) return;
    const Tensor<T>& g = tp.grad_ref(self);
    Tensor<T>& gx = tp.grad_buffer(in);
    for (size_t o = 0; o < lay.outer; ++o) {
      const T* src = g.data() + o * chunk;
      T* dst = gx.data() + o * in_row + offset;
      for (size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  }, "slice");
}

template <class T>
Var reshape(Tape<T>& t, Var x, Shape shape) {
  Tensor<T> y = t.value(x).reshaped(std::move(shape));
  return t.push(std::move(y), {x.id}, [](Tape<T>& tp, int self) {
    int in = tp.input(self, 0);
    if (!tp.requires_grad(Var{in})) return;
    const Tensor<T>& g = tp.grad_ref(self);
    Tensor<T>& gx = tp.grad_buffer(in);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "reshape");
}

#define OBJNAV_INSTANTIATE(T)                                                   \
  template class Tensor<T>;                                                     \
  template class Tape<T>;                                                       \
  template Var affine<T>(Tape<T>&, Var, Var, Var);                              \
  template Var matmul<T>(Tape<T>&, Var, Var);                                   \
  template Var conv1d<T>(Tape<T>&, Var, Var, Var, int);                         \
  template Var tanh<T>(Tape<T>&, Var);                                          \
  template Var relu<T>(Tape<T>&, Var);                                          \
  template Var sigmoid<T>(Tape<T>&, Var);                                       \
  template Var exp<T>(Tape<T>&, Var);                                           \
  template Var log<T>(Tape<T>&, Var);                                           \
  template Var square<T>(Tape<T>&, Var);                                        \
  template Var add<T>(Tape<T>&, Var, Var);                                      \
  template Var sub<T>(Tape<T>&, Var, Var);                                      \
  template Var mul<T>(Tape<T>&, Var, Var);                                      \
  template Var scale<T>(Tape<T>&, Var, T, T);                                   \
  template Var sum<T>(Tape<T>&, Var);                                           \
  template Var mean<T>(Tape<T>&, Var);                                          \
  template Var sum_cols<T>(Tape<T>&, Var);                                      \
  template Var min_elementwise<T>(Tape<T>&, Var, Var);                          \
  template Var clamp<T>(Tape<T>&, Var, T, T);                                   \
  template Var concat<T>(Tape<T>&, const std::vector<Var>&, int);               \
  template Var slice<T>(Tape<T>&, Var, int, int, int);                          \
  template Var reshape<T>(Tape<T>&, Var, Shape);

OBJNAV_INSTANTIATE(float)
OBJNAV_INSTANTIATE(double)

}  // namespace objnav::ad
