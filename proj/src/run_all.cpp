#include <thread>

#include "dynarace/services.hpp"

namespace dynarace {

AllResult run_all(const RunConfig& base) {
  RunConfig cfg = base;
  // Ephemeral loopback ports keep concurrent runs apart.
  cfg.host = "127.0.0.1";
  cfg.collector_port = 0;
  cfg.trainer_port = 0;
  const Track track = load_run_track(cfg);
  const std::uint64_t rounds = planned_rounds(cfg);

  Bookkeeper bk(cfg, /*lockstep=*/true);
  bk.start();
  cfg.collector_port = bk.collector_port();
  cfg.trainer_port = bk.trainer_port();

  CollectorOptions opts;
  opts.lockstep = true;
  opts.stop_after_sim_seconds = round_target(cfg, rounds);
  Collector collector(cfg, track, opts);
  TrainerService trainer(cfg, track);

  std::exception_ptr failure;
  std::thread tc([&] {
    try {
      collector.run();
    } catch (...) {
      failure = std::current_exception();
    }
  });
  try {
    trainer.run(rounds);
  } catch (...) {
    failure = std::current_exception();
  }
  bk.wait_metrics(rounds, 10'000);
  collector.stop();
  tc.join();
  bk.stop();
  if (failure) std::rethrow_exception(failure);
  return AllResult{trainer.rounds_done(), collector.sim_seconds()};
}

}  // namespace dynarace
