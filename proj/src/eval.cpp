#include "objnav/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "objnav/error.hpp"
#include "objnav/seed.hpp"

namespace objnav {

void to_json(nlohmann::json& j, const EpisodeRecord& r) {
  nlohmann::json traj = nlohmann::json::array();
  for (const Pose& p : r.trajectory) traj.push_back({p.x, p.y, p.theta});
  j = {{"world", r.world},
       {"goal", std::string(label_name(r.goal))},
       {"goal_id", r.goal_id},
       {"seed", r.seed},
       {"success", r.success},
       {"optimal", r.optimal},
       {"path_length", r.path_length},
       {"steps", r.steps},
       {"collisions", r.collisions},
       {"trajectory", std::move(traj)}};
}

void from_json(const nlohmann::json& j, EpisodeRecord& r) {
  r.world = j.at("world").get<std::string>();
  const auto label = parse_label(j.at("goal").get<std::string>());
  if (!label) throw ParseError("record: unknown goal label");
  r.goal = *label;
  r.goal_id = j.value("goal_id", -1);
  r.seed = j.value("seed", uint64_t{0});
  r.success = j.at("success").get<bool>();
  r.optimal = j.at("optimal").get<double>();
  r.path_length = j.at("path_length").get<double>();
  r.steps = j.value("steps", 0);
  r.collisions = j.value("collisions", 0);
  r.trajectory.clear();
  if (j.contains("trajectory")) {
    for (const auto& p : j.at("trajectory")) r.trajectory.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
  }
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

void check_records(const std::vector<EpisodeRecord>& records, const char* op) {
  if (records.empty()) throw InvariantError(std::string(op) + ": no records");
  for (const auto& r : records) {
    if (!(r.optimal > 0)) throw InvariantError(std::string(op) + ": optimal length must be positive");
  }
}

}  // namespace

double spl_term(const EpisodeRecord& r) {
  return r.success ? r.optimal / std::max(r.path_length, r.optimal) : 0.0;
}

double compute_spl(const std::vector<EpisodeRecord>& records) {
  check_records(records, "compute_spl");
  double s = 0;
  for (const auto& r : records) s += spl_term(r);
  return s / static_cast<double>(records.size());
}

double success_rate(const std::vector<EpisodeRecord>& records) {
  check_records(records, "success_rate");
  double s = 0;
  for (const auto& r : records) s += r.success ? 1.0 : 0.0;
  return s / static_cast<double>(records.size());
}

std::vector<BucketStat> bucket_by_distance(const std::vector<EpisodeRecord>& records, const std::vector<double>& edges) {
  if (edges.size() < 2) throw InvariantError("bucket_by_distance: need at least two edges");
  for (size_t k = 1; k < edges.size(); ++k) {
    if (!(edges[k] > edges[k - 1])) throw InvariantError("bucket_by_distance: edges must be strictly increasing");
  }
  std::vector<BucketStat> out(edges.size() - 1);
  std::vector<std::vector<EpisodeRecord>> groups(out.size());
  for (const auto& r : records) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), r.optimal);
    if (it == edges.begin() || it == edges.end()) continue;
    groups[static_cast<size_t>(it - edges.begin() - 1)].push_back(r);
  }
  for (size_t k = 0; k < out.size(); ++k) {
    out[k].lo = edges[k];
    out[k].hi = edges[k + 1];
    out[k].n = static_cast<int>(groups[k].size());
    if (out[k].n > 0) {
      out[k].spl = compute_spl(groups[k]);
      out[k].sr = success_rate(groups[k]);
    }
  }
  return out;
}

ObjectTable per_object_table(const std::vector<EpisodeRecord>& records) {
  std::map<Label, std::vector<EpisodeRecord>> groups;
  for (const auto& r : records) groups[r.goal].push_back(r);
  ObjectTable t;
  for (const auto& [label, g] : groups) {
    ObjectRow row{static_cast<int>(g.size()), compute_spl(g), success_rate(g)};
    t.rows[label] = row;
    t.mean_spl += row.spl;
    t.mean_sr += row.sr;
  }
  if (!t.rows.empty()) {
    t.mean_spl /= static_cast<double>(t.rows.size());
    t.mean_sr /= static_cast<double>(t.rows.size());
  }
  return t;
}

nlohmann::json to_json(const std::vector<BucketStat>& buckets) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& b : buckets) {
    nlohmann::json e = {{"lo", b.lo}, {"hi", b.hi}, {"n", b.n}};
    if (b.n > 0) {
      e["spl"] = b.spl;
      e["sr"] = b.sr;
    } else {
      e["empty"] = true;
    }
    j.push_back(std::move(e));
  }
  return j;
}

nlohmann::json to_json(const ObjectTable& table) {
  nlohmann::json rows = nlohmann::json::object();
  for (const auto& [label, r] : table.rows) rows[std::string(label_name(label))] = {{"n", r.n}, {"spl", r.spl}, {"sr", r.sr}};
  return {{"rows", rows}, {"mean", {{"spl", table.mean_spl}, {"sr", table.mean_sr}}}};
}

// ---------------------------------------------------------------------------
// SVG

std::string export_trajectory_svg(const EpisodeRecord& record, const World& world) {
  constexpr double kScale = 50.0;  // px per meter
  const double W = world.width() * kScale, H = world.height() * kScale;
  const double res = world.resolution() * kScale;
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  auto X = [&](double x) { return x * kScale; };
  auto Y = [&](double y) { return H - y * kScale; };
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
    << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  s << "<g fill=\"#333333\">\n";
  for (int i = 0; i < world.rows(); ++i) {
    int j = 0;
    while (j < world.cols()) {
      if (!world.occupied(i, j)) {
        ++j;
        continue;
      }
      const int start = j;
      while (j < world.cols() && world.occupied(i, j)) ++j;
      s << "<rect x=\"" << start * res << "\" y=\"" << H - (i + 1) * res << "\" width=\"" << (j - start) * res << "\" height=\""
        << res << "\"/>\n";
    }
  }
  s << "</g>\n";
  for (const auto& o : world.objects()) {
    const bool goal = o.id == record.goal_id;
    s << "<rect x=\"" << X(o.box.min_x) << "\" y=\"" << Y(o.box.max_y) << "\" width=\"" << X(o.box.max_x - o.box.min_x)
      << "\" height=\"" << X(o.box.max_y - o.box.min_y) << "\" fill=\"#bbbbbb\""
      << (goal ? " stroke=\"red\" stroke-width=\"3\"" : "") << "><title>" << label_name(o.label) << "</title></rect>\n";
  }
  const auto& t = record.trajectory;
  if (t.size() >= 2) {
    s << "<g stroke-width=\"3\" stroke-linecap=\"round\" fill=\"none\">\n";
    const double n = static_cast<double>(t.size() - 1);
    for (size_t k = 1; k < t.size(); ++k) {
      const double f = static_cast<double>(k - 1) / std::max(1.0, n - 1);
      const int g = static_cast<int>(std::lround(200 * (1 - f)));
      const int b = static_cast<int>(std::lround(255 * f));
      s << "<line x1=\"" << X(t[k - 1].x) << "\" y1=\"" << Y(t[k - 1].y) << "\" x2=\"" << X(t[k].x) << "\" y2=\"" << Y(t[k].y)
        << "\" stroke=\"rgb(0," << g << ',' << b << ")\"/>\n";
    }
    s << "</g>\n";
  }
  if (!t.empty()) {
    s << "<circle cx=\"" << X(t.front().x) << "\" cy=\"" << Y(t.front().y) << "\" r=\"5\" fill=\"rgb(0,200,0)\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Policies

Twist SacPolicy::act(const Observation& obs, const EpisodeState& env) {
  const auto a = runner_.act(obs);
  return twist_from_action(a[0], a[1], env.cfg);
}

void RoombaPolicy::begin(const EpisodeState&, uint64_t seed) {
  st_ = RoombaState{};
  st_.seed = seed;
}

void TgtPolicy::begin(const EpisodeState& env, uint64_t) {
  auto& g = graphs_[env.world.get()];
  if (!g) g = std::make_shared<const TopoGraph>(extract_skeleton(*env.world, env.cfg.robot_radius));
  graph_ = g;
  st_ = TgtState{};
}

// ---------------------------------------------------------------------------
// Harness

void record_step(EpisodeRecord& rec, const Pose& before, const EpisodeState& after, const StepResult& r) {
  rec.path_length += std::hypot(after.pose.x - before.x, after.pose.y - before.y);
  rec.steps += 1;
  rec.collisions += r.collided ? 1 : 0;
  rec.success = r.success;
  rec.trajectory.push_back(after.pose);
}

EpisodeRecord run_episode(EpisodePolicy& policy, std::shared_ptr<const World> world, Label goal, uint64_t seed,
                          const EpisodeConfig& cfg, GeodesicCache* cache) {
  ResetResult rr = reset(world, goal, seed, cfg, cache);
  EpisodeState& st = rr.state;
  EpisodeRecord rec;
  rec.world = world->name();
  rec.goal = goal;
  rec.goal_id = st.goal_id;
  rec.seed = seed;
  rec.optimal = st.start_distance;
  rec.success = st.success;
  rec.trajectory.push_back(st.pose);
  policy.begin(st, derive_seed(seed, 0x706f6c69ull));
  Observation obs = std::move(rr.obs);
  while (!st.done) {
    const Twist t = policy.act(obs, st);
    const Pose before = st.pose;
    StepResult r = step(st, t);
    record_step(rec, before, st, r);
    obs = std::move(r.obs);
  }
  return rec;
}

void to_json(nlohmann::json& j, const SuiteConfig& cfg) {
  j = {{"episodes_per_world", cfg.episodes_per_world},
       {"seed", cfg.seed},
       {"workers", cfg.workers},
       {"episode", cfg.episode},
       {"bucket_edges", cfg.bucket_edges}};
}

void from_json(const nlohmann::json& j, SuiteConfig& cfg) {
  cfg.episodes_per_world = j.value("episodes_per_world", cfg.episodes_per_world);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.workers = j.value("workers", cfg.workers);
  if (j.contains("episode")) j.at("episode").get_to(cfg.episode);
  cfg.bucket_edges = j.value("bucket_edges", cfg.bucket_edges);
}

std::pair<Label, uint64_t> suite_episode(const World& world, size_t k, int i, uint64_t seed) {
  std::vector<Label> present;
  for (int l = 0; l < kNumLabels; ++l) {
    if (!world.objects_with_label(static_cast<Label>(l)).empty()) present.push_back(static_cast<Label>(l));
  }
  if (present.empty()) throw InvariantError("suite: world '" + world.name() + "' has no labeled objects");
  return {present[static_cast<size_t>(i) % present.size()], derive_seed(seed, k, static_cast<uint64_t>(i))};
}

std::vector<EpisodeRecord> run_suite(const PolicyFactory& make_policy, const std::vector<std::shared_ptr<const World>>& worlds,
                                     const SuiteConfig& cfg) {
  if (cfg.episodes_per_world < 1) throw InvariantError("suite: episodes_per_world must be >= 1");
  struct Job {
    size_t world;
    int episode;
  };
  std::vector<Job> jobs;
  for (size_t k = 0; k < worlds.size(); ++k) {
    for (int i = 0; i < cfg.episodes_per_world; ++i) jobs.push_back({k, i});
  }
  std::vector<EpisodeRecord> out(jobs.size());
  GeodesicCache cache;
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    try {
      auto policy = make_policy();
      for (size_t j; (j = next.fetch_add(1)) < jobs.size();) {
        const auto& w = worlds[jobs[j].world];
        const auto [label, seed] = suite_episode(*w, jobs[j].world, jobs[j].episode, cfg.seed);
        out[j] = run_episode(*policy, w, label, seed, cfg.episode, &cache);
      }
    } catch (...) {
      std::lock_guard lock(mu);
      if (!failure) failure = std::current_exception();
      next = jobs.size();
    }
  };
  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < workers; ++t) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

nlohmann::json results_json(const std::vector<EpisodeRecord>& records, const SuiteConfig& cfg, const nlohmann::json& extra) {
  nlohmann::json j;
  j["config"] = cfg;
  if (!extra.is_null()) j["config"].update(extra);
  j["records"] = records;
  if (!records.empty()) {
    j["spl"] = compute_spl(records);
    j["sr"] = success_rate(records);
    j["buckets"] = to_json(bucket_by_distance(records, cfg.bucket_edges));
    j["per_object"] = to_json(per_object_table(records));
  }
  return j;
}

}  // namespace objnav
