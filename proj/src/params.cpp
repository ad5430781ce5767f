#include "objnav/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "objnav/bytes.hpp"
#include "objnav/error.hpp"

namespace objnav {

template <class T>
int ParamSet<T>::add(std::string name, ad::Tensor<T> value) {
  if (by_name_.count(name)) throw InvariantError("param set: duplicate name '" + name + "'");
  const int idx = static_cast<int>(entries_.size());
  by_name_.emplace(name, idx);
  entries_.push_back({std::move(name), std::move(value)});
  return idx;
}

template <class T>
int ParamSet<T>::index(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw InvariantError("param set: no entry '" + std::string(name) + "'");
  return it->second;
}

template <class T>
bool ParamSet<T>::contains(std::string_view name) const {
  return by_name_.count(std::string(name)) != 0;
}

template <class T>
size_t ParamSet<T>::scalar_count() const {
  size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <class T>
bool ParamSet<T>::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].value.shape() != other.entries_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

template <class T>
uint64_t ParamSet<T>::checksum() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    for (int d : e.value.shape()) mix(&d, sizeof d);
    mix(e.value.data(), e.value.size() * sizeof(T));
  }
  return h;
}

template <class T>
void require_same_layout(const ParamSet<T>& a, const ParamSet<T>& b, const char* op) {
  if (!a.same_layout(b)) throw ShapeError(std::string(op) + ": parameter layouts differ");
}

template <class T>
AdamState<T> AdamState<T>::zeros_like(const ParamSet<T>& params) {
  AdamState s;
  for (const auto& e : params) {
    s.m.emplace_back(e.value.shape());
    s.v.emplace_back(e.value.shape());
  }
  return s;
}

template <class T>
void adam_step(ParamSet<T>& params, const std::vector<ad::Tensor<T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/state counts differ");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape() || state.m[i].shape() != params[i].value.shape()) {
      throw ShapeError("adam_step: shape mismatch for '" + params[i].name + "' " +
                       ad::shape_str(params[i].value.shape()) + " vs grad " +
                       ad::shape_str(grads[i].shape()));
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.eps);
  for (size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].value.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    const size_t n = grads[i].size();
    for (size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      p[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
}

template <class T>
void polyak_update(ParamSet<T>& target, const ParamSet<T>& online, double tau) {
  require_same_layout(target, online, "polyak_update");
  const T a = static_cast<T>(1.0 - tau), b = static_cast<T>(tau);
  for (size_t i = 0; i < target.size(); ++i) {
    T* t = target[i].value.data();
    const T* o = online[i].value.data();
    for (size_t k = 0; k < target[i].value.size(); ++k) t[k] = a * t[k] + b * o[k];
  }
}

template class ParamSet<float>;
template class ParamSet<double>;
template struct AdamState<float>;
template struct AdamState<double>;
template void require_same_layout(const ParamSet<float>&, const ParamSet<float>&, const char*);
template void require_same_layout(const ParamSet<double>&, const ParamSet<double>&, const char*);
template void adam_step(ParamSet<float>&, const std::vector<ad::Tensor<float>>&, AdamState<float>&,
                        const AdamConfig&);
template void adam_step(ParamSet<double>&, const std::vector<ad::Tensor<double>>&, AdamState<double>&,
                        const AdamConfig&);
template void polyak_update(ParamSet<float>&, const ParamSet<float>&, double);
template void polyak_update(ParamSet<double>&, const ParamSet<double>&, double);

namespace {
constexpr char kMagic[8] = {'O', 'S', 'A', 'C', 'P', 'A', 'R', 'M'};
}

std::string encode_checkpoint(const ParamSet<float>& params, uint32_t version) {
  ByteWriter w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put<uint32_t>(version);
  w.put<uint32_t>(static_cast<uint32_t>(params.size()));
  for (const auto& e : params) {
    w.put_string16(e.name);
    w.put<uint8_t>(0);
    w.put<uint8_t>(static_cast<uint8_t>(e.value.ndim()));
    for (int d : e.value.shape()) w.put<uint32_t>(static_cast<uint32_t>(d));
    w.put_bytes(e.value.data(), e.value.size() * sizeof(float));
  }
  return w.take();
}

ParamSet<float> decode_checkpoint(std::string_view bytes, uint32_t* version) {
  try {
    ByteReader r(bytes);
    if (r.get_bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
      throw ParseError("checkpoint: bad magic");
    }
    const uint32_t ver = r.get<uint32_t>();
    if (version) *version = ver;
    const uint32_t count = r.get<uint32_t>();
    ParamSet<float> out;
    for (uint32_t i = 0; i < count; ++i) {
      std::string name = r.get_string16();
      if (r.get<uint8_t>() != 0) throw ParseError("checkpoint: unsupported dtype for '" + name + "'");
      const int ndim = r.get<uint8_t>();
      ad::Shape shape;
      for (int k = 0; k < ndim; ++k) shape.push_back(static_cast<int>(r.get<uint32_t>()));
      const size_t n = ad::shape_size(shape);
      if (n > r.remaining() / sizeof(float)) throw ParseError("checkpoint: truncated data for '" + name + "'");
      std::vector<float> data(n);
      std::string_view raw = r.get_bytes(n * sizeof(float));
      std::memcpy(data.data(), raw.data(), raw.size());
      out.add(std::move(name), ad::Tensor<float>(std::move(shape), std::move(data)));
    }
    if (!r.done()) throw ParseError("checkpoint: trailing bytes");
    return out;
  } catch (const TruncatedFrameError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const ParamSet<float>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  const std::string bytes = encode_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParamSet<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace objnav
