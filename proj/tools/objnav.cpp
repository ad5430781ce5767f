// objnav: every role and tool behind one binary.
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "objnav/distrib.hpp"
#include "objnav/error.hpp"
#include "objnav/eval.hpp"
#include "objnav/gradcheck.hpp"
#include "objnav/net.hpp"
#include "objnav/teleop.hpp"

using namespace objnav;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

/// Everything a config file may set. Missing keys keep their defaults.
struct AppConfig {
  NetConfig net;
  SacConfig sac;
  LocalRunConfig run;
  SuiteConfig suite;
  TrainerConfig trainer;
  GeneratorConfig generator;
  int worlds = 10;
  uint64_t world_seed = 1;
  std::vector<std::string> world_files;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
}

AppConfig load_config(const std::string& path) {
  AppConfig c;
  if (path.empty()) return c;
  const json j = json::parse(read_file(path));
  if (j.contains("net")) j.at("net").get_to(c.net);
  if (j.contains("sac")) j.at("sac").get_to(c.sac);
  if (j.contains("run")) j.at("run").get_to(c.run);
  if (j.contains("suite")) j.at("suite").get_to(c.suite);
  if (j.contains("generator")) j.at("generator").get_to(c.generator);
  if (j.contains("trainer")) {
    const json& t = j.at("trainer");
    c.trainer.steps = t.value("steps", c.trainer.steps);
    c.trainer.publish_every = t.value("publish_every", c.trainer.publish_every);
    c.trainer.metrics_every = t.value("metrics_every", c.trainer.metrics_every);
    c.trainer.poll_ms = t.value("poll_ms", c.trainer.poll_ms);
  }
  if (j.contains("worlds")) {
    if (j.at("worlds").is_array()) {
      c.world_files = j.at("worlds").get<std::vector<std::string>>();
    } else {
      c.worlds = j.at("worlds").get<int>();
    }
  }
  c.world_seed = j.value("world_seed", c.world_seed);
  return c;
}

/// Seed precedence: --seed, then OBJNAV_SEED, then the config file.
std::optional<uint64_t> seed_override(const CLI::Option* opt, uint64_t flag) {
  if (opt->count() > 0) return flag;
  if (const char* env = std::getenv("OBJNAV_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw CLI::ValidationError("OBJNAV_SEED", "not an unsigned integer: " + std::string(env));
    }
  }
  return std::nullopt;
}

std::vector<std::shared_ptr<const World>> load_worlds(const AppConfig& c, const std::vector<std::string>& files) {
  std::vector<std::shared_ptr<const World>> out;
  const auto& list = files.empty() ? c.world_files : files;
  for (const auto& f : list) out.push_back(std::make_shared<const World>(load_world(read_file(f))));
  if (out.empty()) {
    for (int k = 0; k < c.worlds; ++k) {
      const uint64_t s = c.world_seed + static_cast<uint64_t>(k);
      out.push_back(std::make_shared<const World>(generate_world(s, c.generator, "gen-" + std::to_string(s))));
    }
  }
  if (out.empty()) throw InvariantError("no worlds");
  return out;
}

void wait_for_stop(double seconds) {
  const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
  while (!g_stop) {
    if (seconds > 0 && std::chrono::steady_clock::now() >= until) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

std::shared_ptr<spdlog::logger> make_logger() {
  auto log = spdlog::stderr_color_mt("objnav");
  if (const char* lvl = std::getenv("OBJNAV_LOG")) {
    const auto level = spdlog::level::from_str(lvl);
    log->set_level(level);
  } else {
    log->set_level(spdlog::level::info);
  }
  return log;
}

MetricsSink metrics_writer(const std::string& path, std::ofstream& file) {
  if (!path.empty() && path != "-") {
    file.open(path);
    if (!file) throw Error("cannot open '" + path + "' for writing");
  }
  return [&file](const json& row) {
    if (file.is_open()) {
      file << row.dump() << '\n';
      file.flush();
    } else {
      std::cout << row.dump() << '\n';
      std::cout.flush();
    }
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed SAC object navigation: roles, evaluation and tools"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_help_all_flag("--help-all");

  std::string config_path;
  uint64_t seed = 1;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  CLI::Option* seed_opt = app.add_option("--seed", seed, "Seed for every random choice");

  auto log = make_logger();

  // gen-world
  std::string out_path;
  std::string world_name;
  auto* gen = app.add_subcommand("gen-world", "Generate a procedural floorplan");
  gen->add_option("--out", out_path, "Output file (default stdout)");
  gen->add_option("--name", world_name, "World name");

  // erb
  std::string erb_listen = "127.0.0.1:7001";
  double run_for = 0;
  auto* erb = app.add_subcommand("erb", "Experience replay buffer and weight server");
  erb->add_option("--listen", erb_listen, "host:port");
  erb->add_option("--for", run_for, "Stop after this many seconds (0: until signalled)");

  // stats
  std::string connect = "127.0.0.1:7001";
  auto* stats = app.add_subcommand("stats", "Print replay buffer statistics from a running erb");
  stats->add_option("--connect", connect, "host:port");

  // trainer
  int64_t steps = -1;
  std::string checkpoint;
  std::string metrics_path;
  auto* trainer = app.add_subcommand("trainer", "SAC trainer against a remote erb");
  trainer->add_option("--connect", connect, "erb host:port");
  trainer->add_option("--steps", steps, "Trainer updates");
  trainer->add_option("--checkpoint", checkpoint, "Write the final policy here");
  trainer->add_option("--metrics", metrics_path, "Metrics JSON lines (default stdout)");

  // collector
  int collector_id = 0;
  int64_t episodes = -1;
  std::vector<std::string> world_files;
  auto* collector = app.add_subcommand("collector", "Experience collector against a remote erb");
  collector->add_option("--connect", connect, "erb host:port");
  collector->add_option("--id", collector_id, "Collector id");
  collector->add_option("--episodes", episodes, "Stop after this many episodes (default: until signalled)");
  collector->add_option("--world", world_files, "World file (repeatable; default: generated)");

  // train-local
  double target_sr = -1;
  auto* local = app.add_subcommand("train-local", "Collectors, buffer and trainer in one process");
  local->add_option("--checkpoint", checkpoint, "Write the final policy here");
  local->add_option("--metrics", metrics_path, "Metrics JSON lines (default stdout)");
  local->add_option("--world", world_files, "World file (repeatable; default: generated)");
  local->add_option("--target-sr", target_sr, "Stop once periodic evaluation reaches this success rate");

  // eval
  std::string policy = "roomba";
  std::string collision_mode;
  int workers = 0;
  auto* ev = app.add_subcommand("eval", "Evaluate a policy over a world suite");
  ev->add_option("--policy", policy, "sac | roomba | tgt")->check(CLI::IsMember({"sac", "roomba", "tgt"}));
  ev->add_option("--episodes", episodes, "Episodes per world");
  ev->add_option("--world", world_files, "World file (repeatable; default: generated)");
  ev->add_option("--checkpoint", checkpoint, "Policy checkpoint (sac)");
  ev->add_option("--collision-mode", collision_mode, "stuck | sliding")->check(CLI::IsMember({"stuck", "sliding"}));
  ev->add_option("--workers", workers, "Evaluation threads");
  ev->add_option("--out", out_path, "Results JSON (default stdout)");

  // teleop
  std::string web_root = "web";
  std::string tele_listen = "127.0.0.1:8080";
  auto* tele = app.add_subcommand("teleop", "Rater server: WebSocket /teleop and the UI at /");
  tele->add_option("--listen", tele_listen, "host:port");
  tele->add_option("--web", web_root, "Static UI directory");
  tele->add_option("--world", world_files, "World file (repeatable; default: generated)");
  tele->add_option("--out", out_path, "Append finished records here as JSON on shutdown");
  tele->add_option("--for", run_for, "Stop after this many seconds (0: until signalled)");

  // gradcheck
  int instances = 100;
  auto* grad = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
  grad->add_option("--instances", instances, "Random instances per check");

  // plot
  std::string results_path;
  int episode_index = 0;
  auto* plot = app.add_subcommand("plot", "Export one evaluated trajectory as SVG");
  plot->add_option("--results", results_path, "Results JSON from eval")->required();
  plot->add_option("--episode", episode_index, "Record index");
  plot->add_option("--world", world_files, "World file (repeatable; default: generated)");
  plot->add_option("--out", out_path, "SVG file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    AppConfig cfg = load_config(config_path);
    const std::optional<uint64_t> seed_arg = seed_override(seed_opt, seed);
    if (seed_arg) {
      cfg.run.seed = *seed_arg;
      cfg.suite.seed = *seed_arg;
      cfg.trainer.seed = *seed_arg;
    }
    const uint64_t base_seed = seed_arg.value_or(cfg.run.seed);

    if (*gen) {
      const std::string name = world_name.empty() ? "gen-" + std::to_string(base_seed) : world_name;
      write_output(out_path, save_world(generate_world(base_seed, cfg.generator, name)));
      return 0;
    }

    if (*erb) {
      ReplayBuffer buffer(cfg.run.buffer);
      WeightStore weights;
      FrameServer server(replay_handler(buffer, base_seed, &weights));
      const Endpoint ep = parse_endpoint(erb_listen);
      server.start(ep);
      log->info("erb listening on {}:{}", ep.host, server.port());
      std::cout << json{{"listening", ep.host + ":" + std::to_string(server.port())}}.dump() << std::endl;
      wait_for_stop(run_for);
      server.stop();
      const BufferStats s = buffer.stats();
      log->info("erb stopped: {} unrolls, {} transitions added", s.unrolls_added, s.transitions_added);
      return 0;
    }

    if (*stats) {
      RemoteService remote(parse_endpoint(connect));
      const BufferStats s = remote.stats();
      std::cout << json{{"unrolls_added", s.unrolls_added},
                        {"transitions_added", s.transitions_added},
                        {"unrolls_stored", s.unrolls_stored},
                        {"transitions_stored", s.transitions_stored},
                        {"unrolls_evicted", s.unrolls_evicted},
                        {"batches_sampled", s.batches_sampled},
                        {"recent_return", s.recent_return},
                        {"weights_version", remote.weights_version()}}
                       .dump()
                << std::endl;
      return 0;
    }

    if (*trainer) {
      if (steps >= 0) cfg.trainer.steps = steps;
      SacState<float> st = make_sac_state<float>(cfg.net, cfg.sac, base_seed);
      RemoteService remote(parse_endpoint(connect));
      std::ofstream mfile;
      const MetricsSink sink = metrics_writer(metrics_path, mfile);
      log->info("trainer: {} steps against {}", cfg.trainer.steps, connect);
      const TrainerReport rep = trainer_loop(st, remote, remote, cfg.trainer, sink, &g_stop);
      log->info("trainer done: {} steps, weights version {}", rep.steps, rep.version);
      if (!checkpoint.empty()) save_checkpoint(checkpoint, st.policy);
      return 0;
    }

    if (*collector) {
      CollectorConfig cc;
      cc.id = collector_id;
      cc.seed = base_seed;
      cc.net = cfg.net;
      cc.episode = cfg.run.episode;
      GeodesicCache cache;
      Collector c(load_worlds(cfg, world_files), cc, &cache);
      RemoteService remote(parse_endpoint(connect));
      CollectorLimits limits;
      limits.max_episodes = episodes;
      const CollectorReport rep = collector_loop(c, remote, remote, limits, &g_stop);
      log->info("collector {} done: {} episodes, {} env steps, last weights version {}", collector_id, rep.episodes,
                rep.env_steps, rep.last_version);
      return 0;
    }

    if (*local) {
      const auto worlds = load_worlds(cfg, world_files);
      SacState<float> st = make_sac_state<float>(cfg.net, cfg.sac, cfg.run.seed);
      std::ofstream mfile;
      const MetricsSink sink = metrics_writer(metrics_path, mfile);
      EvalHook hook;
      if (cfg.run.eval_every > 0) {
        hook = [&](const ParamSet<float>& p, int64_t env, int64_t train) {
          auto params = std::make_shared<const ParamSet<float>>(p);
          const auto recs = run_suite([&] { return std::make_unique<SacPolicy>(cfg.net, params); }, worlds, cfg.suite);
          const double sr = success_rate(recs);
          log->info("eval at {} env steps / {} updates: SR {:.3f} SPL {:.3f}", env, train, sr, compute_spl(recs));
          return target_sr >= 0 && sr >= target_sr;
        };
      }
      const LocalRunResult r = train_local(worlds, cfg.run, st, sink, hook);
      log->info("train-local done: {} env steps, {} updates, weights version {}", r.env_steps, r.train_steps, r.version);
      if (!checkpoint.empty()) save_checkpoint(checkpoint, st.policy);
      return 0;
    }

    if (*ev) {
      if (episodes > 0) cfg.suite.episodes_per_world = static_cast<int>(episodes);
      if (workers > 0) cfg.suite.workers = workers;
      if (!collision_mode.empty()) cfg.suite.episode.collision_mode = parse_collision_mode(collision_mode);
      const auto worlds = load_worlds(cfg, world_files);
      PolicyFactory factory;
      if (policy == "sac") {
        if (checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
        auto params = std::make_shared<const ParamSet<float>>(load_checkpoint(checkpoint));
        factory = [&cfg, params] { return std::make_unique<SacPolicy>(cfg.net, params); };
      } else if (policy == "tgt") {
        factory = [] { return std::make_unique<TgtPolicy>(); };
      } else {
        factory = [] { return std::make_unique<RoombaPolicy>(); };
      }
      const auto recs = run_suite(factory, worlds, cfg.suite);
      json extra = {{"policy", policy}};
      if (!checkpoint.empty()) extra["checkpoint"] = checkpoint;
      write_output(out_path, results_json(recs, cfg.suite, extra).dump(1) + "\n");
      log->info("eval {}: {} episodes, SR {:.3f} SPL {:.3f}", policy, recs.size(), success_rate(recs), compute_spl(recs));
      return 0;
    }

    if (*tele) {
      TeleopHub hub(load_worlds(cfg, world_files), cfg.suite.episode, cfg.suite.seed);
      WebServer server(web_root, "/teleop", teleop_sessions(hub));
      const Endpoint ep = parse_endpoint(tele_listen);
      server.start(ep);
      log->info("teleop on http://{}:{}/ (WebSocket /teleop)", ep.host, server.port());
      std::cout << json{{"listening", ep.host + ":" + std::to_string(server.port())}}.dump() << std::endl;
      wait_for_stop(run_for);
      server.stop();
      if (!out_path.empty()) {
        json doc = json::array();
        std::ifstream existing(out_path);
        if (existing) {
          std::ostringstream s;
          s << existing.rdbuf();
          if (!s.str().empty()) doc = json::parse(s.str());
        }
        for (const auto& r : hub.records()) doc.push_back(r);
        write_output(out_path, doc.dump(1) + "\n");
      }
      return 0;
    }

    if (*grad) {
      std::vector<gradcheck::Report> all;
      for (auto group : {gradcheck::check_primitives(base_seed, instances), gradcheck::check_networks(base_seed, instances),
                         gradcheck::check_losses(base_seed, instances)}) {
        all.insert(all.end(), group.begin(), group.end());
      }
      bool ok = true;
      for (const auto& r : all) {
        const bool pass = r.fd.max_rel_error <= 1e-4;
        ok = ok && pass;
        std::cout << json{{"name", r.name},
                          {"instances", r.instances},
                          {"max_rel_error", r.fd.max_rel_error},
                          {"checked", r.fd.checked},
                          {"skipped", r.fd.skipped},
                          {"pass", pass}}
                         .dump()
                  << '\n';
      }
      return ok ? 0 : 1;
    }

    if (*plot) {
      const json results = json::parse(read_file(results_path));
      const auto& records = results.at("records");
      if (episode_index < 0 || episode_index >= static_cast<int>(records.size())) {
        throw Error("episode index out of range (results hold " + std::to_string(records.size()) + ")");
      }
      const EpisodeRecord rec = records.at(static_cast<size_t>(episode_index)).get<EpisodeRecord>();
      for (const auto& w : load_worlds(cfg, world_files)) {
        if (w->name() == rec.world) {
          write_output(out_path, export_trajectory_svg(rec, *w));
          return 0;
        }
      }
      throw Error("world '" + rec.world + "' not found; pass it with --world");
    }
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return 1;
  }
  return 0;
}
