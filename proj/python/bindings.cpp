#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "objnav/error.hpp"
#include "objnav/eval.hpp"
#include "objnav/replay.hpp"
#include "objnav/sim.hpp"
#include "objnav/world.hpp"

namespace py = pybind11;
using namespace objnav;
using nlohmann::json;

namespace {

EpisodeConfig episode_from(const std::string& cfg_json) {
  EpisodeConfig cfg;
  if (!cfg_json.empty()) json::parse(cfg_json).get_to(cfg);
  return cfg;
}

py::dict obs_dict(const Observation& o) {
  py::dict d;
  d["lidar"] = o.lidar;
  d["det"] = std::vector<int>(o.det.begin(), o.det.end());
  d["goal"] = std::vector<float>(o.goal.begin(), o.goal.end());
  d["prev_action"] = std::vector<float>(o.prev_action.begin(), o.prev_action.end());
  d["collision"] = static_cast<bool>(o.collision);
  return d;
}

/// Single-episode environment over one world.
class Env {
 public:
  Env(std::shared_ptr<const World> world, const std::string& cfg_json)
      : world_(std::move(world)), cfg_(episode_from(cfg_json)) {}

  py::dict reset(const std::string& goal, uint64_t seed) {
    const auto label = parse_label(goal);
    if (!label) throw py::value_error("unknown goal label '" + goal + "'");
    ResetResult rr = objnav::reset(world_, *label, seed, cfg_, &cache_);
    state_ = std::move(rr.state);
    return obs_dict(rr.obs);
  }

  py::tuple step(double v, double w) {
    if (!state_) throw py::value_error("reset first");
    const StepResult r = objnav::step(*state_, {v, w});
    return py::make_tuple(obs_dict(r.obs), r.reward, r.done, r.collided, r.success);
  }

  std::tuple<double, double, double> pose() const {
    if (!state_) throw py::value_error("reset first");
    return {state_->pose.x, state_->pose.y, state_->pose.theta};
  }

  double start_distance() const { return state_ ? state_->start_distance : 0.0; }
  int steps() const { return state_ ? state_->step_index : 0; }

 private:
  std::shared_ptr<const World> world_;
  EpisodeConfig cfg_;
  GeodesicCache cache_;
  std::optional<EpisodeState> state_;
};

std::vector<EpisodeRecord> records_from(const std::string& records_json) {
  return json::parse(records_json).get<std::vector<EpisodeRecord>>();
}

std::string evaluate(const std::string& policy, const std::vector<std::shared_ptr<const World>>& worlds,
                     const std::string& suite_json) {
  SuiteConfig cfg;
  if (!suite_json.empty()) json::parse(suite_json).get_to(cfg);
  PolicyFactory f;
  if (policy == "roomba") {
    f = [] { return std::make_unique<RoombaPolicy>(); };
  } else if (policy == "tgt") {
    f = [] { return std::make_unique<TgtPolicy>(); };
  } else if (policy == "still") {
    f = [] { return std::make_unique<StandStillPolicy>(); };
  } else {
    throw py::value_error("policy must be roomba, tgt or still");
  }
  std::vector<EpisodeRecord> recs;
  {
    py::gil_scoped_release release;
    recs = run_suite(f, worlds, cfg);
  }
  return results_json(recs, cfg, {{"policy", policy}}).dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Simulator, metrics and scripted baselines";

  py::register_exception<InvariantError>(m, "InvariantError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<EpisodeError>(m, "EpisodeError", PyExc_RuntimeError);
  py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);

  py::class_<World, std::shared_ptr<World>>(m, "World")
      .def_property_readonly("name", &World::name)
      .def_property_readonly("rows", &World::rows)
      .def_property_readonly("cols", &World::cols)
      .def_property_readonly("resolution", &World::resolution)
      .def_property_readonly("width", &World::width)
      .def_property_readonly("height", &World::height)
      .def("occupied", &World::occupied)
      .def("labels", [](const World& w) {
        std::vector<std::string> out;
        for (const auto& o : w.objects()) out.emplace_back(label_name(o.label));
        return out;
      })
      .def("content_hash", &World::content_hash)
      .def("to_json", [](const World& w) { return save_world(w); });

  m.def(
      "generate_world",
      [](uint64_t seed, const std::string& name, const std::string& cfg_json) {
        GeneratorConfig cfg;
        if (!cfg_json.empty()) json::parse(cfg_json).get_to(cfg);
        return std::make_shared<World>(generate_world(seed, cfg, name));
      },
      py::arg("seed"), py::arg("name") = "", py::arg("config") = "");
  m.def("load_world", [](const std::string& text) { return std::make_shared<World>(load_world(text)); });
  m.def("label_names", [] { return std::vector<std::string>(kLabelNames.begin(), kLabelNames.end()); });

  py::class_<Env>(m, "Env")
      .def(py::init<std::shared_ptr<const World>, const std::string&>(), py::arg("world"), py::arg("config") = "")
      .def("reset", &Env::reset, py::arg("goal"), py::arg("seed"))
      .def("step", &Env::step, py::arg("v"), py::arg("w"))
      .def_property_readonly("pose", &Env::pose)
      .def_property_readonly("start_distance", &Env::start_distance)
      .def_property_readonly("steps", &Env::steps);

  m.def("compute_spl", [](const std::string& records) { return compute_spl(records_from(records)); });
  m.def("success_rate", [](const std::string& records) { return success_rate(records_from(records)); });
  m.def(
      "evaluate",
      [](const std::string& policy, const std::vector<std::shared_ptr<World>>& worlds, const std::string& suite) {
        return evaluate(policy, {worlds.begin(), worlds.end()}, suite);
      },
      py::arg("policy"), py::arg("worlds"), py::arg("suite") = "");
  m.def("default_episode_config", [] { return json(EpisodeConfig{}).dump(); });
}
