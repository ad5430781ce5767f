#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace objnav {

/// Closed vocabulary of goal object labels.
enum class Label : uint8_t { bed, chair, microwave, refrigerator, table, toilet, oven, tv, sofa };

inline constexpr int kNumLabels = 9;
inline constexpr std::array<std::string_view, kNumLabels> kLabelNames = {
    "bed", "chair", "microwave", "refrigerator", "table", "toilet", "oven", "tv", "sofa"};

std::string_view label_name(Label label);
std::optional<Label> parse_label(std::string_view name);

/// Axis-aligned rectangle in meters.
struct Box {
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;

  /// Euclidean distance from a point to the rectangle (0 inside).
  double distance_to(double x, double y) const;
  bool contains(double x, double y) const;
  bool operator==(const Box&) const = default;
};

struct LabeledObject {
  int id = 0;
  Label label = Label::bed;
  Box box;
  bool operator==(const LabeledObject&) const = default;
};

/// Immutable floorplan: row-major occupancy grid plus labeled object boxes.
///
/// Cell (row i, column j) spans [j*res, (j+1)*res] x [i*res, (i+1)*res].
/// Construction validates the border, object placement and free-space rules.
class World {
 public:
  World(std::string name, double resolution, int rows, int cols, std::vector<uint8_t> occupied,
        std::vector<LabeledObject> objects);

  const std::string& name() const { return name_; }
  double resolution() const { return resolution_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double width() const { return cols_ * resolution_; }
  double height() const { return rows_ * resolution_; }

  bool occupied(int row, int col) const { return grid_[static_cast<size_t>(row) * cols_ + col] != 0; }
  bool in_grid(int row, int col) const { return row >= 0 && col >= 0 && row < rows_ && col < cols_; }
  const std::vector<uint8_t>& grid() const { return grid_; }

  const std::vector<LabeledObject>& objects() const { return objects_; }
  const LabeledObject* find_object(int id) const;
  std::vector<int> objects_with_label(Label label) const;

  /// FNV-1a over grid and objects; used to compare generated worlds.
  uint64_t content_hash() const;

  bool operator==(const World& other) const;

 private:
  std::string name_;
  double resolution_;
  int rows_;
  int cols_;
  std::vector<uint8_t> grid_;
  std::vector<LabeledObject> objects_;
};

World load_world(std::string_view text);
std::string save_world(const World& world);

struct GeneratorConfig {
  double extent_x = 12.0;
  double extent_y = 10.0;
  double resolution = 0.05;
  int min_rooms = 4;
  int max_rooms = 6;
  double min_room_size = 2.2;
  double door_width = 0.6;
  double wall_thickness = 0.1;
  double robot_radius = 0.18;
  int min_objects_per_label = 1;
  int max_objects_per_label = 1;
  int max_attempts = 50;
};

void to_json(nlohmann::json& j, const GeneratorConfig& cfg);
void from_json(const nlohmann::json& j, GeneratorConfig& cfg);

/// Multi-room floorplan with door gaps; pure function of (seed, cfg).
World generate_world(uint64_t seed, const GeneratorConfig& cfg, const std::string& name = "");

/// Disc of `radius` at (x, y) touches no occupied cell and no object box, and lies in the grid.
bool is_navigable(const World& world, double x, double y, double radius);

enum class HitKind : uint8_t { none, wall, object };

struct RayHit {
  double range = 0;
  HitKind kind = HitKind::none;
  int object_id = -1;
};

/// Exact grid traversal plus slab tests against object boxes.
///
/// Boxes that contain the origin are ignored. Ties between a wall and an object resolve to the
/// object. Throws InvariantError when the origin cell is occupied.
RayHit raycast(const World& world, double ox, double oy, double angle, double max_range);

/// Navigability of each cell center for a disc of the given radius.
class NavGrid {
 public:
  NavGrid(const World& world, double radius);
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool free(int row, int col) const {
    return row >= 0 && col >= 0 && row < rows_ && col < cols_ &&
           cells_[static_cast<size_t>(row) * cols_ + col] != 0;
  }
  const std::vector<uint8_t>& cells() const { return cells_; }

 private:
  int rows_;
  int cols_;
  std::vector<uint8_t> cells_;
};

/// Geodesic distance (meters) to the success region of one object; +inf when unreachable.
class GeodesicField {
 public:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  GeodesicField(int object_id, int rows, int cols, double resolution, std::vector<double> dist);

  int object_id() const { return object_id_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double resolution() const { return resolution_; }
  double at(int row, int col) const { return dist_[static_cast<size_t>(row) * cols_ + col]; }
  const std::vector<double>& values() const { return dist_; }
  double max_finite() const;

  /// Bilinear interpolation over cell centers, skipping unreachable neighbors. Falls back to the
  /// nearest reachable cell (plus straight-line offset) when all four neighbors are unreachable.
  double interpolate(double x, double y) const;

 private:
  int object_id_;
  int rows_;
  int cols_;
  double resolution_;
  std::vector<double> dist_;
};

GeodesicField geodesic_field(const World& world, int object_id, double success_radius,
                             double robot_radius);

/// 4-connected components of cells satisfying `free`; returns label per cell (-1 for blocked).
std::vector<int> connected_components(int rows, int cols, const std::vector<uint8_t>& free,
                                      int* count = nullptr);

}  // namespace objnav
