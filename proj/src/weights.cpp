#include "objnav/weights.hpp"

#include <string>

#include "objnav/error.hpp"

namespace objnav {

uint64_t WeightStore::publish(ParamSet<float> params) {
  auto p = std::make_shared<const ParamSet<float>>(std::move(params));
  std::lock_guard lock(mu_);
  current_ = WeightSnapshot{current_.version + 1, std::move(p)};
  return current_.version;
}

void WeightStore::publish(uint64_t version, ParamSet<float> params) {
  auto p = std::make_shared<const ParamSet<float>>(std::move(params));
  std::lock_guard lock(mu_);
  if (version <= current_.version) {
    throw InvariantError("publish: version " + std::to_string(version) + " does not exceed current version " +
                         std::to_string(current_.version));
  }
  current_ = WeightSnapshot{version, std::move(p)};
}

std::optional<WeightSnapshot> WeightStore::fetch(uint64_t min_version) const {
  std::lock_guard lock(mu_);
  if (current_.version == 0 || current_.version < min_version + 1) return std::nullopt;
  return current_;
}

uint64_t WeightStore::version() const {
  std::lock_guard lock(mu_);
  return current_.version;
}

}  // namespace objnav
