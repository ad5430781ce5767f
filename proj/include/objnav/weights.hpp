#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>

#include "objnav/params.hpp"

namespace objnav {

/// Published policy weights. Immutable once published.
struct WeightSnapshot {
  uint64_t version = 0;
  std::shared_ptr<const ParamSet<float>> params;
};

/// Holds the newest snapshot; publishers swap it whole, readers get a shared reference.
class WeightStore {
 public:
  /// Publishes as current version + 1 and returns that version.
  uint64_t publish(ParamSet<float> params);
  /// Throws InvariantError unless `version` exceeds the current version.
  void publish(uint64_t version, ParamSet<float> params);
  /// Newest snapshot if its version is >= min_version + 1, otherwise nullopt (not modified).
  std::optional<WeightSnapshot> fetch(uint64_t min_version) const;
  uint64_t version() const;

 private:
  mutable std::mutex mu_;
  WeightSnapshot current_;
};

}  // namespace objnav
