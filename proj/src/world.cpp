#include "objnav/world.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <sstream>

#include <json.hpp>

#include "objnav/error.hpp"

namespace objnav {

namespace {

constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

void fnv_mix(uint64_t& h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

// Range of cell indices whose interior intersects the open interval (lo, hi).
std::pair<int, int> interior_cells(double lo, double hi, double res) {
  int first = static_cast<int>(std::floor(lo / res + 1e-9));
  int last = static_cast<int>(std::ceil(hi / res - 1e-9)) - 1;
  return {first, last};
}

}  // namespace

std::string_view label_name(Label label) { return kLabelNames[static_cast<size_t>(label)]; }

std::optional<Label> parse_label(std::string_view name) {
  for (size_t i = 0; i < kLabelNames.size(); ++i) {
    if (kLabelNames[i] == name) return static_cast<Label>(i);
  }
  return std::nullopt;
}

double Box::distance_to(double x, double y) const {
  double dx = std::max({min_x - x, 0.0, x - max_x});
  double dy = std::max({min_y - y, 0.0, y - max_y});
  return std::hypot(dx, dy);
}

bool Box::contains(double x, double y) const {
  return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
}

World::World(std::string name, double resolution, int rows, int cols, std::vector<uint8_t> cells,
             std::vector<LabeledObject> objects)
    : name_(std::move(name)),
      resolution_(resolution),
      rows_(rows),
      cols_(cols),
      grid_(std::move(cells)),
      objects_(std::move(objects)) {
  if (!(resolution_ > 0) || !std::isfinite(resolution_)) {
    throw InvariantError("world: resolution must be > 0");
  }
  if (rows_ < 3 || cols_ < 3) throw InvariantError("world: grid must be at least 3x3");
  if (grid_.size() != static_cast<size_t>(rows_) * cols_) {
    throw InvariantError("world: grid size does not match rows*cols");
  }
  for (int j = 0; j < cols_; ++j) {
    if (!occupied(0, j) || !occupied(rows_ - 1, j)) {
      throw InvariantError("world: border rule violated (free cell on top/bottom border row)");
    }
  }
  for (int i = 0; i < rows_; ++i) {
    if (!occupied(i, 0) || !occupied(i, cols_ - 1)) {
      throw InvariantError("world: border rule violated (free cell on left/right border column)");
    }
  }
  if (std::none_of(grid_.begin(), grid_.end(), [](uint8_t c) { return c == 0; })) {
    throw InvariantError("world: free-space rule violated (no free cell)");
  }
  std::vector<int> ids;
  for (const auto& obj : objects_) {
    const Box& b = obj.box;
    if (!(b.max_x > b.min_x) || !(b.max_y > b.min_y)) {
      throw InvariantError("world: object " + std::to_string(obj.id) + " has an empty box");
    }
    if (b.min_x < 0 || b.min_y < 0 || b.max_x > width() || b.max_y > height()) {
      throw InvariantError("world: object " + std::to_string(obj.id) + " lies outside the grid");
    }
    auto [j0, j1] = interior_cells(b.min_x, b.max_x, resolution_);
    auto [i0, i1] = interior_cells(b.min_y, b.max_y, resolution_);
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        if (occupied(i, j)) {
          throw InvariantError("world: object " + std::to_string(obj.id) +
                               " overlaps an occupied cell (" + std::to_string(i) + "," +
                               std::to_string(j) + ")");
        }
      }
    }
    ids.push_back(obj.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw InvariantError("world: duplicate object id");
  }
}

const LabeledObject* World::find_object(int id) const {
  for (const auto& obj : objects_) {
    if (obj.id == id) return &obj;
  }
  return nullptr;
}

std::vector<int> World::objects_with_label(Label label) const {
  std::vector<int> out;
  for (const auto& obj : objects_) {
    if (obj.label == label) out.push_back(obj.id);
  }
  return out;
}

uint64_t World::content_hash() const {
  uint64_t h = kFnvOffset;
  fnv_mix(h, &rows_, sizeof rows_);
  fnv_mix(h, &cols_, sizeof cols_);
  fnv_mix(h, &resolution_, sizeof resolution_);
  fnv_mix(h, grid_.data(), grid_.size());
  for (const auto& obj : objects_) {
    fnv_mix(h, &obj.id, sizeof obj.id);
    fnv_mix(h, &obj.label, sizeof obj.label);
    fnv_mix(h, &obj.box, sizeof obj.box);
  }
  return h;
}

bool World::operator==(const World& other) const {
  return name_ == other.name_ && resolution_ == other.resolution_ && rows_ == other.rows_ &&
         cols_ == other.cols_ && grid_ == other.grid_ && objects_ == other.objects_;
}

World load_world(std::string_view text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("world file: ") + e.what());
  }
  auto field = [&](const json& obj, const char* key, const std::string& where) -> const json& {
    if (!obj.is_object() || !obj.contains(key)) {
      throw ParseError("world file: missing field '" + where + key + "'");
    }
    return obj.at(key);
  };
  if (!doc.is_object()) throw ParseError("world file: top level must be an object");

  const json& jname = field(doc, "name", "");
  if (!jname.is_string()) throw ParseError("world file: field 'name' must be a string");
  const json& jres = field(doc, "resolution", "");
  if (!jres.is_number()) throw ParseError("world file: field 'resolution' must be a number");
  const json& jgrid = field(doc, "grid", "");
  if (!jgrid.is_array() || jgrid.empty()) {
    throw ParseError("world file: field 'grid' must be a non-empty array of strings");
  }

  const int rows = static_cast<int>(jgrid.size());
  int cols = -1;
  std::vector<uint8_t> cells;
  for (int i = 0; i < rows; ++i) {
    const json& row = jgrid[i];
    std::string where = "grid[" + std::to_string(i) + "]";
    if (!row.is_string()) throw ParseError("world file: " + where + " must be a string");
    const auto& s = row.get_ref<const std::string&>();
    if (cols < 0) cols = static_cast<int>(s.size());
    if (static_cast<int>(s.size()) != cols) {
      throw ParseError("world file: " + where + " has length " + std::to_string(s.size()) +
                       ", expected " + std::to_string(cols));
    }
    for (size_t j = 0; j < s.size(); ++j) {
      if (s[j] == '#') {
        cells.push_back(1);
      } else if (s[j] == '.') {
        cells.push_back(0);
      } else {
        throw ParseError("world file: " + where + " column " + std::to_string(j) +
                         ": unexpected character '" + std::string(1, s[j]) + "'");
      }
    }
  }

  std::vector<LabeledObject> objects;
  if (doc.contains("objects")) {
    const json& jobjs = doc.at("objects");
    if (!jobjs.is_array()) throw ParseError("world file: field 'objects' must be an array");
    for (size_t k = 0; k < jobjs.size(); ++k) {
      const json& jo = jobjs[k];
      std::string where = "objects[" + std::to_string(k) + "].";
      const json& jid = field(jo, "id", where);
      const json& jlabel = field(jo, "label", where);
      const json& jbox = field(jo, "box", where);
      if (!jid.is_number_integer()) throw ParseError("world file: " + where + "id must be an integer");
      if (!jlabel.is_string()) throw ParseError("world file: " + where + "label must be a string");
      auto label = parse_label(jlabel.get<std::string>());
      if (!label) {
        throw ParseError("world file: " + where + "label: unknown label '" +
                         jlabel.get<std::string>() + "'");
      }
      if (!jbox.is_array() || jbox.size() != 4 ||
          !std::all_of(jbox.begin(), jbox.end(), [](const json& v) { return v.is_number(); })) {
        throw ParseError("world file: " + where + "box must be [min_x,min_y,max_x,max_y]");
      }
      LabeledObject obj;
      obj.id = jid.get<int>();
      obj.label = *label;
      obj.box = {jbox[0].get<double>(), jbox[1].get<double>(), jbox[2].get<double>(),
                 jbox[3].get<double>()};
      objects.push_back(obj);
    }
  }
  return World(jname.get<std::string>(), jres.get<double>(), rows, cols, std::move(cells),
               std::move(objects));
}

std::string save_world(const World& world) {
  nlohmann::ordered_json doc;
  doc["name"] = world.name();
  doc["resolution"] = world.resolution();
  auto grid = nlohmann::ordered_json::array();
  for (int i = 0; i < world.rows(); ++i) {
    std::string row(static_cast<size_t>(world.cols()), '.');
    for (int j = 0; j < world.cols(); ++j) {
      if (world.occupied(i, j)) row[j] = '#';
    }
    grid.push_back(std::move(row));
  }
  doc["grid"] = std::move(grid);
  auto objs = nlohmann::ordered_json::array();
  for (const auto& obj : world.objects()) {
    nlohmann::ordered_json jo;
    jo["id"] = obj.id;
    jo["label"] = std::string(label_name(obj.label));
    jo["box"] = {obj.box.min_x, obj.box.min_y, obj.box.max_x, obj.box.max_y};
    objs.push_back(std::move(jo));
  }
  doc["objects"] = std::move(objs);
  return doc.dump(1) + "\n";
}

bool is_navigable(const World& world, double x, double y, double radius) {
  const double res = world.resolution();
  if (!(x - radius >= 0) || !(y - radius >= 0) || x + radius > world.width() ||
      y + radius > world.height()) {
    return false;
  }
  const int i0 = std::max(0, static_cast<int>(std::floor((y - radius) / res)));
  const int i1 = std::min(world.rows() - 1, static_cast<int>(std::floor((y + radius) / res)));
  const int j0 = std::max(0, static_cast<int>(std::floor((x - radius) / res)));
  const int j1 = std::min(world.cols() - 1, static_cast<int>(std::floor((x + radius) / res)));
  for (int i = i0; i <= i1; ++i) {
    for (int j = j0; j <= j1; ++j) {
      if (!world.occupied(i, j)) continue;
      Box cell{j * res, i * res, (j + 1) * res, (i + 1) * res};
      if (cell.distance_to(x, y) < radius) return false;
    }
  }
  for (const auto& obj : world.objects()) {
    if (obj.box.distance_to(x, y) < radius) return false;
  }
  return true;
}

RayHit raycast(const World& world, double ox, double oy, double angle, double max_range) {
  const double res = world.resolution();
  int col = static_cast<int>(std::floor(ox / res));
  int row = static_cast<int>(std::floor(oy / res));
  if (!world.in_grid(row, col) || world.occupied(row, col)) {
    throw InvariantError("raycast: origin inside an obstacle");
  }
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  const double inf = std::numeric_limits<double>::infinity();
  const int step_x = dx > 0 ? 1 : -1;
  const int step_y = dy > 0 ? 1 : -1;

  auto next_x = [&]() {
    if (dx == 0) return inf;
    double bx = (step_x > 0 ? col + 1 : col) * res;
    return (bx - ox) / dx;
  };
  auto next_y = [&]() {
    if (dy == 0) return inf;
    double by = (step_y > 0 ? row + 1 : row) * res;
    return (by - oy) / dy;
  };

  double wall_t = inf;
  while (true) {
    double tx = next_x();
    double ty = next_y();
    double t;
    if (tx <= ty) {
      t = tx;
      col += step_x;
    } else {
      t = ty;
      row += step_y;
    }
    if (t > max_range) break;
    if (!world.in_grid(row, col) || world.occupied(row, col)) {
      wall_t = std::max(t, 0.0);
      break;
    }
  }

  double obj_t = inf;
  int obj_id = -1;
  for (const auto& obj : world.objects()) {
    const Box& b = obj.box;
    if (ox > b.min_x && ox < b.max_x && oy > b.min_y && oy < b.max_y) continue;
    double t_enter = -inf, t_exit = inf;
    if (dx != 0) {
      double t1 = (b.min_x - ox) / dx, t2 = (b.max_x - ox) / dx;
      t_enter = std::max(t_enter, std::min(t1, t2));
      t_exit = std::min(t_exit, std::max(t1, t2));
    } else if (ox < b.min_x || ox > b.max_x) {
      continue;
    }
    if (dy != 0) {
      double t1 = (b.min_y - oy) / dy, t2 = (b.max_y - oy) / dy;
      t_enter = std::max(t_enter, std::min(t1, t2));
      t_exit = std::min(t_exit, std::max(t1, t2));
    } else if (oy < b.min_y || oy > b.max_y) {
      continue;
    }
    if (t_enter <= t_exit && t_exit >= 0) {
      double t = std::max(t_enter, 0.0);
      if (t < obj_t) {
        obj_t = t;
        obj_id = obj.id;
      }
    }
  }

  RayHit hit;
  if (obj_t <= wall_t && obj_t <= max_range) {
    hit = {obj_t, HitKind::object, obj_id};
  } else if (wall_t <= max_range) {
    hit = {wall_t, HitKind::wall, -1};
  } else {
    hit = {max_range, HitKind::none, -1};
  }
  return hit;
}

NavGrid::NavGrid(const World& world, double radius)
    : rows_(world.rows()), cols_(world.cols()), cells_(static_cast<size_t>(rows_) * cols_, 0) {
  const double res = world.resolution();
  for (int i = 0; i < rows_; ++i) {
    for (int j = 0; j < cols_; ++j) {
      if (world.occupied(i, j)) continue;
      cells_[static_cast<size_t>(i) * cols_ + j] =
          is_navigable(world, (j + 0.5) * res, (i + 0.5) * res, radius) ? 1 : 0;
    }
  }
}

GeodesicField::GeodesicField(int object_id, int rows, int cols, double resolution,
                             std::vector<double> dist)
    : object_id_(object_id), rows_(rows), cols_(cols), resolution_(resolution), dist_(std::move(dist)) {}

double GeodesicField::max_finite() const {
  double m = 0;
  for (double d : dist_) {
    if (std::isfinite(d)) m = std::max(m, d);
  }
  return m;
}

double GeodesicField::interpolate(double x, double y) const {
  const double u = x / resolution_ - 0.5;
  const double v = y / resolution_ - 0.5;
  const int j0 = static_cast<int>(std::floor(u));
  const int i0 = static_cast<int>(std::floor(v));
  const double fx = u - j0;
  const double fy = v - i0;
  double acc = 0, wsum = 0;
  for (int di = 0; di <= 1; ++di) {
    for (int dj = 0; dj <= 1; ++dj) {
      int i = i0 + di, j = j0 + dj;
      if (i < 0 || j < 0 || i >= rows_ || j >= cols_) continue;
      double d = at(i, j);
      if (!std::isfinite(d)) continue;
      double w = (dj ? fx : 1 - fx) * (di ? fy : 1 - fy);
      acc += w * d;
      wsum += w;
    }
  }
  if (wsum > 1e-12) return acc / wsum;

  // Nearest reachable cell within a growing window.
  const int ci = static_cast<int>(std::floor(y / resolution_));
  const int cj = static_cast<int>(std::floor(x / resolution_));
  for (int r = 1; r <= std::max(rows_, cols_); ++r) {
    double best = kInf;
    for (int i = ci - r; i <= ci + r; ++i) {
      for (int j = cj - r; j <= cj + r; ++j) {
        if (i < 0 || j < 0 || i >= rows_ || j >= cols_) continue;
        double d = at(i, j);
        if (!std::isfinite(d)) continue;
        double off = std::hypot((j + 0.5) * resolution_ - x, (i + 0.5) * resolution_ - y);
        best = std::min(best, d + off);
      }
    }
    if (std::isfinite(best)) return best;
  }
  return kInf;
}

GeodesicField geodesic_field(const World& world, int object_id, double success_radius,
                             double robot_radius) {
  const LabeledObject* obj = world.find_object(object_id);
  if (!obj) throw InvariantError("geodesic_field: unknown object id " + std::to_string(object_id));
  const NavGrid nav(world, robot_radius);
  const int rows = world.rows(), cols = world.cols();
  const double res = world.resolution();
  std::vector<double> dist(static_cast<size_t>(rows) * cols, GeodesicField::kInf);

  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      if (!nav.free(i, j)) continue;
      if (obj->box.distance_to((j + 0.5) * res, (i + 0.5) * res) <= success_radius) {
        dist[static_cast<size_t>(i) * cols + j] = 0;
        heap.emplace(0.0, i * cols + j);
      }
    }
  }
  if (heap.empty()) {
    throw InvariantError("geodesic_field: no navigable source cell near object " +
                         std::to_string(object_id));
  }
  const double diag = res * std::sqrt(2.0);
  while (!heap.empty()) {
    auto [d, idx] = heap.top();
    heap.pop();
    if (d > dist[idx]) continue;
    const int i = idx / cols, j = idx % cols;
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        if (di == 0 && dj == 0) continue;
        const int ni = i + di, nj = j + dj;
        if (!nav.free(ni, nj)) continue;
        const double nd = d + ((di != 0 && dj != 0) ? diag : res);
        const size_t nidx = static_cast<size_t>(ni) * cols + nj;
        if (nd < dist[nidx]) {
          dist[nidx] = nd;
          heap.emplace(nd, static_cast<int>(nidx));
        }
      }
    }
  }
  return GeodesicField(object_id, rows, cols, res, std::move(dist));
}

std::vector<int> connected_components(int rows, int cols, const std::vector<uint8_t>& free,
                                      int* count) {
  std::vector<int> label(free.size(), -1);
  int n = 0;
  std::vector<int> stack;
  for (size_t s = 0; s < free.size(); ++s) {
    if (!free[s] || label[s] >= 0) continue;
    label[s] = n;
    stack.push_back(static_cast<int>(s));
    while (!stack.empty()) {
      int idx = stack.back();
      stack.pop_back();
      int i = idx / cols, j = idx % cols;
      const int ni[4] = {i - 1, i + 1, i, i};
      const int nj[4] = {j, j, j - 1, j + 1};
      for (int k = 0; k < 4; ++k) {
        if (ni[k] < 0 || nj[k] < 0 || ni[k] >= rows || nj[k] >= cols) continue;
        int nidx = ni[k] * cols + nj[k];
        if (free[nidx] && label[nidx] < 0) {
          label[nidx] = n;
          stack.push_back(nidx);
        }
      }
    }
    ++n;
  }
  if (count) *count = n;
  return label;
}

// ---------------------------------------------------------------------------
// Procedural generation

namespace {

struct Rect {
  int r0, c0, r1, c1;  // inclusive cell bounds of the room interior
  int height() const { return r1 - r0 + 1; }
  int width() const { return c1 - c0 + 1; }
};

struct Door {
  int a, b;
  bool vertical_wall;  // wall between a (left) and b (right)
  int lo, hi;          // shared span along the wall (cells, inclusive)
  int wall_lo, wall_hi;
};

struct ObjectSize {
  double w, d;
};

constexpr std::array<ObjectSize, kNumLabels> kObjectSizes = {{
    {1.9, 1.4},   // bed
    {0.5, 0.5},   // chair
    {0.5, 0.35},  // microwave
    {0.8, 0.7},   // refrigerator
    {1.2, 0.8},   // table
    {0.7, 0.45},  // toilet
    {0.6, 0.6},   // oven
    {1.0, 0.25},  // tv
    {1.9, 0.85},  // sofa
}};

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::optional<World> try_generate(std::mt19937_64& rng, const GeneratorConfig& cfg,
                                  const std::string& name) {
  const double res = cfg.resolution;
  const int rows = static_cast<int>(std::lround(cfg.extent_y / res));
  const int cols = static_cast<int>(std::lround(cfg.extent_x / res));
  const int wall = std::max(1, static_cast<int>(std::lround(cfg.wall_thickness / res)));
  const int min_room = static_cast<int>(std::ceil(cfg.min_room_size / res));
  if (rows < 2 * wall + min_room || cols < 2 * wall + min_room) return std::nullopt;

  const int n_rooms = uniform_int(rng, cfg.min_rooms, cfg.max_rooms);
  std::vector<Rect> rooms{{wall, wall, rows - 1 - wall, cols - 1 - wall}};
  while (static_cast<int>(rooms.size()) < n_rooms) {
    std::vector<size_t> splittable;
    std::vector<double> weights;
    for (size_t k = 0; k < rooms.size(); ++k) {
      const Rect& r = rooms[k];
      if (r.height() >= 2 * min_room + wall || r.width() >= 2 * min_room + wall) {
        splittable.push_back(k);
        weights.push_back(static_cast<double>(r.height()) * r.width());
      }
    }
    if (splittable.empty()) return std::nullopt;
    std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
    const size_t k = splittable[pick(rng)];
    Rect r = rooms[k];
    bool can_h = r.height() >= 2 * min_room + wall;
    bool can_v = r.width() >= 2 * min_room + wall;
    bool split_rows;
    if (can_h && can_v) {
      split_rows = r.height() > r.width() ? true : (r.width() > r.height() ? false : (rng() & 1));
    } else {
      split_rows = can_h;
    }
    if (split_rows) {
      int cut = uniform_int(rng, r.r0 + min_room, r.r1 - min_room - wall + 1);
      rooms[k] = {r.r0, r.c0, cut - 1, r.c1};
      rooms.push_back({cut + wall, r.c0, r.r1, r.c1});
    } else {
      int cut = uniform_int(rng, r.c0 + min_room, r.c1 - min_room - wall + 1);
      rooms[k] = {r.r0, r.c0, r.r1, cut - 1};
      rooms.push_back({r.r0, cut + wall, r.r1, r.c1});
    }
  }

  std::vector<uint8_t> grid(static_cast<size_t>(rows) * cols, 1);
  for (const Rect& r : rooms) {
    for (int i = r.r0; i <= r.r1; ++i) {
      for (int j = r.c0; j <= r.c1; ++j) grid[static_cast<size_t>(i) * cols + j] = 0;
    }
  }

  const int door_cells = static_cast<int>(std::ceil(cfg.door_width / res - 1e-9));
  const int margin = static_cast<int>(std::ceil(0.3 / res));
  std::vector<Door> doors;
  for (size_t a = 0; a < rooms.size(); ++a) {
    for (size_t b = 0; b < rooms.size(); ++b) {
      if (a == b) continue;
      const Rect& ra = rooms[a];
      const Rect& rb = rooms[b];
      if (ra.c1 + wall + 1 == rb.c0) {
        int lo = std::max(ra.r0, rb.r0), hi = std::min(ra.r1, rb.r1);
        if (hi - lo + 1 >= door_cells + 2 * margin) {
          doors.push_back({static_cast<int>(a), static_cast<int>(b), true, lo, hi, ra.c1 + 1, rb.c0 - 1});
        }
      }
      if (ra.r1 + wall + 1 == rb.r0) {
        int lo = std::max(ra.c0, rb.c0), hi = std::min(ra.c1, rb.c1);
        if (hi - lo + 1 >= door_cells + 2 * margin) {
          doors.push_back({static_cast<int>(a), static_cast<int>(b), false, lo, hi, ra.r1 + 1, rb.r0 - 1});
        }
      }
    }
  }
  std::shuffle(doors.begin(), doors.end(), rng);
  std::vector<int> parent(rooms.size());
  for (size_t k = 0; k < parent.size(); ++k) parent[k] = static_cast<int>(k);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  size_t merged = 1;
  for (const Door& d : doors) {
    int fa = find(d.a), fb = find(d.b);
    bool tree_edge = fa != fb;
    if (!tree_edge && uniform_real(rng, 0, 1) > 0.25) continue;
    if (tree_edge) {
      parent[fa] = fb;
      ++merged;
    }
    int start = uniform_int(rng, d.lo + margin, d.hi - margin - door_cells + 1);
    for (int s = start; s < start + door_cells; ++s) {
      for (int w = d.wall_lo; w <= d.wall_hi; ++w) {
        if (d.vertical_wall) {
          grid[static_cast<size_t>(s) * cols + w] = 0;
        } else {
          grid[static_cast<size_t>(w) * cols + s] = 0;
        }
      }
    }
  }
  if (merged != rooms.size()) return std::nullopt;

  std::vector<LabeledObject> objects;
  int next_id = 1;
  auto nav_connected = [&](const World& w) {
    NavGrid nav(w, cfg.robot_radius);
    int n = 0;
    connected_components(rows, cols, nav.cells(), &n);
    return n == 1;
  };
  for (int li = 0; li < kNumLabels; ++li) {
    const int count = uniform_int(rng, cfg.min_objects_per_label, cfg.max_objects_per_label);
    for (int c = 0; c < count; ++c) {
      bool placed = false;
      for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
        const Rect& room = rooms[static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(rooms.size()) - 1))];
        ObjectSize sz = kObjectSizes[li];
        if (rng() & 1) std::swap(sz.w, sz.d);
        const double x0 = room.c0 * res, x1 = (room.c1 + 1) * res;
        const double y0 = room.r0 * res, y1 = (room.r1 + 1) * res;
        if (x1 - x0 < sz.w + 0.1 || y1 - y0 < sz.d + 0.1) continue;
        double bx, by;
        // Half of the objects sit against a wall, the rest float in the room.
        int side = uniform_int(rng, 0, 7);
        bx = uniform_real(rng, x0, x1 - sz.w);
        by = uniform_real(rng, y0, y1 - sz.d);
        if (side == 0) bx = x0;
        if (side == 1) bx = x1 - sz.w;
        if (side == 2) by = y0;
        if (side == 3) by = y1 - sz.d;
        Box box{bx, by, bx + sz.w, by + sz.d};
        bool clash = false;
        for (const auto& other : objects) {
          Box g{other.box.min_x - 0.5, other.box.min_y - 0.5, other.box.max_x + 0.5, other.box.max_y + 0.5};
          if (box.min_x < g.max_x && box.max_x > g.min_x && box.min_y < g.max_y && box.max_y > g.min_y) {
            clash = true;
            break;
          }
        }
        if (clash) continue;
        std::vector<LabeledObject> trial = objects;
        trial.push_back({next_id, static_cast<Label>(li), box});
        World w(name, res, rows, cols, grid, trial);
        if (!nav_connected(w)) continue;
        try {
          geodesic_field(w, next_id, 1.0, cfg.robot_radius);
        } catch (const InvariantError&) {
          continue;
        }
        objects = std::move(trial);
        ++next_id;
        placed = true;
      }
      if (!placed && c < cfg.min_objects_per_label) return std::nullopt;
    }
  }

  World world(name, res, rows, cols, std::move(grid), std::move(objects));
  int n_free = 0;
  std::vector<uint8_t> free(world.grid().size());
  for (size_t k = 0; k < free.size(); ++k) free[k] = world.grid()[k] ? 0 : 1;
  connected_components(rows, cols, free, &n_free);
  if (n_free != 1 || !nav_connected(world)) return std::nullopt;
  return world;
}

}  // namespace

#define OBJNAV_GEN_FIELDS(X)                                                                             \
  X(extent_x) X(extent_y) X(resolution) X(min_rooms) X(max_rooms) X(min_room_size) X(door_width) X(wall_thickness) \
  X(robot_radius) X(min_objects_per_label) X(max_objects_per_label) X(max_attempts)

void to_json(nlohmann::json& j, const GeneratorConfig& cfg) {
  j = nlohmann::json::object();
#define X(f) j[#f] = cfg.f;
  OBJNAV_GEN_FIELDS(X)
#undef X
}

void from_json(const nlohmann::json& j, GeneratorConfig& cfg) {
#define X(f) cfg.f = j.value(#f, cfg.f);
  OBJNAV_GEN_FIELDS(X)
#undef X
}

World generate_world(uint64_t seed, const GeneratorConfig& cfg, const std::string& name) {
  if (cfg.door_width < 2 * cfg.robot_radius + 2 * cfg.resolution) {
    throw GenerationError("generate_world: door width below 2*robot_radius + 2*resolution");
  }
  if (cfg.min_rooms < 1 || cfg.max_rooms < cfg.min_rooms) {
    throw GenerationError("generate_world: invalid room count range");
  }
  std::mt19937_64 rng(seed);
  const std::string world_name = name.empty() ? "gen-" + std::to_string(seed) : name;
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    if (auto w = try_generate(rng, cfg, world_name)) return std::move(*w);
  }
  throw GenerationError("generate_world: no valid floorplan after " +
                        std::to_string(cfg.max_attempts) + " attempts");
}

}  // namespace objnav
