#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "objnav/autodiff.hpp"

namespace objnav {

/// Ordered collection of named arrays. Order is insertion order and defines checkpoint layout.
template <class T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    ad::Tensor<T> value;
  };

  int add(std::string name, ad::Tensor<T> value);
  int index(std::string_view name) const;
  bool contains(std::string_view name) const;

  size_t size() const { return entries_.size(); }
  Entry& operator[](size_t i) { return entries_[i]; }
  const Entry& operator[](size_t i) const { return entries_[i]; }
  ad::Tensor<T>& at(std::string_view name) { return entries_[static_cast<size_t>(index(name))].value; }
  const ad::Tensor<T>& at(std::string_view name) const {
    return entries_[static_cast<size_t>(index(name))].value;
  }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  size_t scalar_count() const;
  /// Same names and shapes in the same order.
  bool same_layout(const ParamSet& other) const;

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  /// FNV-1a over names, shapes and raw bytes.
  uint64_t checksum() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> by_name_;
};

template <class T>
void require_same_layout(const ParamSet<T>& a, const ParamSet<T>& b, const char* op);

struct AdamConfig {
  double lr = 0.000316;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<ad::Tensor<T>> m;
  std::vector<ad::Tensor<T>> v;
  int64_t t = 0;

  static AdamState zeros_like(const ParamSet<T>& params);
};

/// One bias-corrected Adam update; grads[i] pairs with params[i].
template <class T>
void adam_step(ParamSet<T>& params, const std::vector<ad::Tensor<T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg);

/// theta_target <- (1 - tau) theta_target + tau theta_online
template <class T>
void polyak_update(ParamSet<T>& target, const ParamSet<T>& online, double tau);

/// Binary checkpoint ("OSACPARM"). Always written as f32.
std::string encode_checkpoint(const ParamSet<float>& params, uint32_t version = 1);
ParamSet<float> decode_checkpoint(std::string_view bytes, uint32_t* version = nullptr);
void save_checkpoint(const std::string& path, const ParamSet<float>& params);
ParamSet<float> load_checkpoint(const std::string& path);

}  // namespace objnav
