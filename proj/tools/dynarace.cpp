#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <thread>

#include "dynarace/config.hpp"
#include "dynarace/error.hpp"
#include "dynarace/eval.hpp"
#include "dynarace/gateway.hpp"
#include "dynarace/plot.hpp"
#include "dynarace/services.hpp"
#include "dynarace/trajectory_log.hpp"

using namespace dynarace;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

void wait_for_signal() {
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

// Runs `body` on a worker thread; an interrupt calls `stop`.
void run_interruptible(const std::function<void()>& body, const std::function<void()>& stop) {
  std::atomic<bool> done{false};
  std::exception_ptr failure;
  std::thread worker([&] {
    try {
      body();
    } catch (...) {
      failure = std::current_exception();
    }
    done = true;
  });
  while (!done) {
    if (g_interrupted) stop();
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  worker.join();
  if (failure) std::rethrow_exception(failure);
}

std::filesystem::path with_extension(std::filesystem::path p, const char* ext) {
  p.replace_extension(ext);
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynarace: model-based reinforcement learning for a simulated balancing racer"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value configuration file (see dump-config)")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override one config key, key=value (repeatable)");

  auto* collector_cmd = app.add_subcommand("collector", "robot role: run episodes and upload them");
  bool realtime = false;
  collector_cmd->add_flag("--realtime", realtime, "pace episodes at the control rate");

  auto* bookkeeper_cmd = app.add_subcommand("bookkeeper", "workstation role: ingest, snapshot, relay");

  auto* trainer_cmd = app.add_subcommand("trainer", "training role: model, rollouts, policy updates");
  std::uint64_t trainer_rounds = 0;
  trainer_cmd->add_option("--rounds", trainer_rounds, "stop after this many rounds (0 = until interrupted)");

  auto* all_cmd = app.add_subcommand("all", "all three roles in one process over loopback");
  std::optional<std::uint64_t> all_seed;
  std::optional<int> all_rounds;
  all_cmd->add_option("--seed", all_seed, "run seed");
  all_cmd->add_option("--rounds", all_rounds, "stop after this many rounds");

  auto* teleop_cmd = app.add_subcommand("teleop", "collector plus the browser gateway at /ws");
  bool scripted = false;
  teleop_cmd->add_flag("--scripted", scripted,
                       "no browser: the scripted driver produces the warm-start drive instead");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a stored checkpoint or the assist baseline");
  std::uint64_t ckpt_id = 0;
  double eval_seconds = 120.0;
  bool baseline = false;
  auto* ckpt_opt = eval_cmd->add_option("--ckpt", ckpt_id, "checkpoint id under <storage_dir>/ckpt");
  eval_cmd->add_option("--seconds", eval_seconds, "simulated seconds")->check(CLI::PositiveNumber);
  auto* baseline_opt = eval_cmd->add_flag("--baseline", baseline,
                                          "assist controller driven at warmstart_speed");
  ckpt_opt->excludes(baseline_opt);

  auto* plot_cmd = app.add_subcommand("plot", "SVG trace plus per-step CSV of a trajectory log");
  std::string traj_path, svg_out, csv_out;
  plot_cmd->add_option("--traj", traj_path, "trajectory log")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--svg", svg_out, "output SVG (default: <traj>.svg)");
  plot_cmd->add_option("--csv", csv_out, "output CSV (default: <traj>.csv)");

  auto* track_cmd = app.add_subcommand("track", "track files");
  track_cmd->require_subcommand(1);
  auto* gen_cmd = track_cmd->add_subcommand("gen", "write a rounded-rectangle track");
  std::string track_out;
  double width = 1.8, height = 1.2, radius = 0.35, half_width = 0.08, spacing = 0.01;
  gen_cmd->add_option("--out", track_out, "output file")->required();
  gen_cmd->add_option("--width", width, "centerline width, m");
  gen_cmd->add_option("--height", height, "centerline height, m");
  gen_cmd->add_option("--radius", radius, "corner radius, m");
  gen_cmd->add_option("--half-width", half_width, "track half-width, m");
  gen_cmd->add_option("--spacing", spacing, "centerline resampling spacing, m");
  auto* check_cmd = track_cmd->add_subcommand("check", "load a track file and print its summary");
  std::string track_in;
  check_cmd->add_option("file", track_in, "track file")->required()->check(CLI::ExistingFile);

  auto* dump_cmd = app.add_subcommand("dump-config", "print the effective configuration");

  std::string keys_help = "\nConfig keys:\n";
  for (const auto& k : config_keys()) keys_help += "  " + k.name + "  " + k.doc + "\n";
  app.footer(keys_help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::kBadConfig, "--set expects key=value, got " + kv);
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (all_seed) cfg.seed = *all_seed;
    if (all_rounds) cfg.rounds = *all_rounds;
    cfg.validate();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  try {
    if (*dump_cmd) {
      std::cout << dump_config(cfg);
    } else if (*bookkeeper_cmd) {
      Bookkeeper bk(cfg);
      bk.start();
      std::cerr << "bookkeeper: collectors on " << bk.collector_port() << ", trainer on " << bk.trainer_port()
                << "\n";
      wait_for_signal();
      bk.stop();
    } else if (*collector_cmd) {
      const Track track = load_run_track(cfg);
      CollectorOptions opts;
      opts.realtime = realtime;
      Collector c(cfg, track, opts);
      run_interruptible([&] { c.run(); }, [&] { c.stop(); });
    } else if (*trainer_cmd) {
      const Track track = load_run_track(cfg);
      TrainerService t(cfg, track);
      run_interruptible([&] { t.run(trainer_rounds); }, [&] { t.stop(); });
    } else if (*all_cmd) {
      const AllResult r = run_all(cfg);
      std::cout << "rounds " << r.rounds << " sim_seconds " << r.sim_seconds << "\n";
    } else if (*teleop_cmd) {
      const Track track = load_run_track(cfg);
      CollectorOptions opts;
      std::unique_ptr<TeleopGateway> gw;
      if (scripted) {
        // Same upload path as a recorded drive, without a browser in the loop.
        opts.stop_after_sim_seconds = cfg.warmstart_seconds;
      } else {
        gw = std::make_unique<TeleopGateway>(cfg.host, cfg.gateway_port, cfg.assets_dir);
        std::cerr << "teleop: ws://" << cfg.host << ":" << gw->port() << "/ws\n";
        opts.gateway = gw.get();
        opts.realtime = true;
      }
      Collector c(cfg, track, opts);
      run_interruptible([&] { c.run(); }, [&] { c.stop(); });
      if (gw) gw->stop();
    } else if (*eval_cmd) {
      const Track track = load_run_track(cfg);
      Rng rng = Rng(cfg.seed).split(0x6576616c);
      EvalReport r;
      if (baseline) {
        r = eval_assist(track, cfg.plant, cfg.assist, cfg.warmstart_speed, eval_seconds, rng);
      } else {
        if (ckpt_opt->count() == 0) {
          std::cerr << "error: eval needs --ckpt <id> or --baseline\n";
          return 2;
        }
        RunLedger ledger(cfg.storage_dir);
        const auto path = ledger.checkpoint_path(ckpt_id);
        if (!std::filesystem::exists(path))
          throw Error(ErrorCode::kBadCheckpoint, "no checkpoint " + path.string());
        const SacAgent agent = deserialize_policy(read_file(path));
        r = eval_policy(agent, track, cfg.plant, cfg.rollout.lookahead_spacing, eval_seconds, rng);
      }
      std::cout << format_report(r) << "\n";
    } else if (*plot_cmd) {
      const Track track = load_run_track(cfg);
      const Trajectory traj = decode_trajectory(read_file(traj_path));
      const auto svg = svg_out.empty() ? with_extension(traj_path, ".svg") : std::filesystem::path(svg_out);
      const auto csv = csv_out.empty() ? with_extension(traj_path, ".csv") : std::filesystem::path(csv_out);
      write_text(svg, trajectory_svg(track, traj));
      write_text(csv, trajectory_csv(track, traj, cfg.plant.dt));
      std::cout << svg.string() << "\n" << csv.string() << "\n";
    } else if (*gen_cmd) {
      const Track t = build_track(rounded_rectangle(width, height, radius), half_width, spacing);
      save_track(t, track_out);
      std::cout << "points " << t.size() << " length " << t.length() << "\n";
    } else if (*check_cmd) {
      const Track t = load_track(track_in);
      std::cout << "points " << t.size() << " length " << t.length() << " half_width " << t.half_width()
                << " spacing " << t.spacing() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kBadConfig ? 2 : 1;
  }
  return 0;
}
