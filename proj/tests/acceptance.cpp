// One PASS/FAIL line per acceptance criterion. Exit status 0 iff all pass.
#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <regex>

#include "dynarace/net.hpp"
#include "dynarace/protocol.hpp"
#include "dynarace/sac.hpp"
#include "dynarace/services.hpp"
#include "dynarace/trajectory_log.hpp"
#include "process.hpp"
#include "support.hpp"

using namespace dynarace;
using namespace dynarace::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const std::string kCli = DYNARACE_CLI;

// ---------------------------------------------------------------------------
// Learning runs: default configuration, `all` per seed, then `eval`.

struct Report {
  int laps = 0;
  double avg_speed = 0.0;
  int crashes = 0;
};

std::optional<Report> parse_report(const std::string& text) {
  const std::regex re(R"(laps=(\d+) avg_speed=([0-9.]+) .*crashes=(\d+))");
  std::smatch m;
  if (!std::regex_search(text, m, re)) return std::nullopt;
  return Report{std::stoi(m[1]), std::stod(m[2]), std::stoi(m[3])};
}

struct Attempt {
  std::uint64_t seed = 0;
  fs::path dir;
  bool ok = false;  // `all` and `eval` exited cleanly
  double wall_seconds = 0.0;
  double sim_seconds = 0.0;
  std::uint64_t final_checkpoint = 0;
  Report policy;
};

constexpr double kEvalSeconds = 120.0;
constexpr double kMaxSimSeconds = 900.0;
constexpr double kWallBudget = 45.0 * 60.0;

int run_cli(const std::vector<std::string>& args, const fs::path& log, int timeout_ms) {
  std::vector<std::string> full{kCli};
  full.insert(full.end(), args.begin(), args.end());
  return wait_exit(spawn(full, log), timeout_ms);
}

Attempt run_attempt(std::uint64_t seed, const fs::path& root, const std::string& tag) {
  Attempt a;
  a.seed = seed;
  a.dir = root / (tag + std::to_string(seed));
  fs::create_directories(a.dir);
  const std::string storage = "storage_dir=" + (a.dir / "run").string();
  const auto t0 = Clock::now();
  const int rc = run_cli({"--set", storage, "all", "--seed", std::to_string(seed)}, a.dir / "all.log", 4 * 3600 * 1000);
  a.wall_seconds = seconds_since(t0);
  if (rc != 0) return a;
  const LedgerState st = RunLedger::replay(a.dir / "run" / "ledger.log");
  a.sim_seconds = st.total_sim_seconds();
  for (const auto& e : fs::directory_iterator(a.dir / "run" / "ckpt")) {
    a.final_checkpoint = std::max<std::uint64_t>(a.final_checkpoint, std::stoull(e.path().stem().string()));
  }
  if (run_cli({"--set", storage, "--set", "seed=" + std::to_string(seed), "eval", "--ckpt",
               std::to_string(a.final_checkpoint), "--seconds", "120"},
              a.dir / "eval.log", 600'000) != 0)
    return a;
  const auto r = parse_report(read_text(a.dir / "eval.log"));
  if (!r) return a;
  a.policy = *r;
  a.ok = true;
  return a;
}

struct LearningResults {
  Report baseline;
  bool baseline_ok = false;
  std::vector<Attempt> attempts;
  std::optional<std::size_t> accepted;  // index of the first attempt meeting every learning criterion
  fs::path root;
};

bool attempt_passes(const Attempt& a, const Report& base) {
  return a.ok && a.sim_seconds <= kMaxSimSeconds + 1e-6 && a.wall_seconds <= kWallBudget && a.policy.laps >= 1 &&
         a.policy.avg_speed >= 2.0 * base.avg_speed && a.policy.laps >= 2 * base.laps;
}

const LearningResults& learning() {
  static const LearningResults results = [] {
    LearningResults r;
    r.root = make_temp_dir("acceptance");
    if (run_cli({"eval", "--baseline", "--seconds", "120"}, r.root / "baseline.log", 600'000) == 0) {
      if (const auto b = parse_report(read_text(r.root / "baseline.log"))) {
        r.baseline = *b;
        r.baseline_ok = true;
      }
    }
    for (std::uint64_t seed : {7, 8, 9}) {
      r.attempts.push_back(run_attempt(seed, r.root, "seed"));
      const Attempt& a = r.attempts.back();
      std::cerr << fmt("  attempt seed %llu: ok=%d sim=%.0fs wall=%.0fs laps=%d avg_speed=%.3f crashes=%d\n",
                       static_cast<unsigned long long>(a.seed), a.ok, a.sim_seconds, a.wall_seconds, a.policy.laps,
                       a.policy.avg_speed, a.policy.crashes);
      if (r.baseline_ok && attempt_passes(a, r.baseline)) {
        r.accepted = r.attempts.size() - 1;
        break;
      }
    }
    return r;
  }();
  return results;
}

std::string attempts_summary(const LearningResults& r, const std::function<std::string(const Attempt&)>& f) {
  std::string out;
  for (const auto& a : r.attempts) {
    if (!out.empty()) out += "; ";
    out += fmt("seed %llu: ", static_cast<unsigned long long>(a.seed)) + (a.ok ? f(a) : std::string("run failed"));
  }
  return out;
}

Outcome desk_scale_learning() {
  const LearningResults& r = learning();
  const auto describe = [](const Attempt& a) {
    return fmt("%d laps in %.0f s eval after %.0f s of collection, %.1f min wall on this host", a.policy.laps,
               kEvalSeconds, a.sim_seconds, a.wall_seconds / 60.0);
  };
  if (r.accepted) return {true, describe(r.attempts[*r.accepted])};
  return {false, attempts_summary(r, describe)};
}

Outcome speed_up() {
  const LearningResults& r = learning();
  if (!r.baseline_ok) return {false, "baseline eval failed"};
  const auto describe = [&](const Attempt& a) {
    return fmt("avg speed %.3f vs baseline %.3f m/s (%.2fx)", a.policy.avg_speed, r.baseline.avg_speed,
               a.policy.avg_speed / r.baseline.avg_speed);
  };
  if (r.accepted) return {true, describe(r.attempts[*r.accepted])};
  return {false, attempts_summary(r, describe)};
}

Outcome lap_count() {
  const LearningResults& r = learning();
  if (!r.baseline_ok) return {false, "baseline eval failed"};
  const auto describe = [&](const Attempt& a) {
    return fmt("%d laps vs baseline %d in %.0f s", a.policy.laps, r.baseline.laps, kEvalSeconds);
  };
  if (r.accepted) return {true, describe(r.attempts[*r.accepted])};
  return {false, attempts_summary(r, describe)};
}

Outcome determinism() {
  // Reuses the seed-7 learning run as the first of the two.
  const LearningResults& r = learning();
  const Attempt& first = r.attempts.front();
  if (first.seed != 7) return {false, "no seed 7 run"};
  const Attempt second = run_attempt(7, r.root, "repeat");
  const fs::path m1 = first.dir / "run" / "metrics.csv", m2 = second.dir / "run" / "metrics.csv";
  if (!fs::exists(m1) || !fs::exists(m2)) return {false, "a run produced no metrics.csv"};
  const std::string a = read_text(m1), b = read_text(m2);
  const std::size_t rows = lines_of(a).size() - 1;
  if (a != b) return {false, fmt("metrics.csv differs (%zu vs %zu bytes)", a.size(), b.size())};
  return {true, fmt("metrics.csv bit-identical across two runs (%zu rows, %zu bytes)", rows, a.size())};
}

// ---------------------------------------------------------------------------
// Gradient suites.

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  Rng rng(101);
  const auto perturb = [&](auto& net) {
    for (auto& p : net.params()) p += rng.uniform(-0.3, 0.3);
  };
  {
    Mlp<double> net({6, 5, 4, 6}, Activation::kSwish);
    net.init(rng, false);
    perturb(net);
    Mlp<double>::Matrix x(6, 7), t(3, 7);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    std::vector<double> grad;
    nll_batch_grad<double>(net, x, t, -10.0, 0.5, &grad);
    const auto fd = central_differences(net.params(), [&] { return nll_batch_grad<double>(net, x, t, -10.0, 0.5, nullptr); });
    worst = std::max(worst, max_rel_error(grad, fd));
  }
  {
    Mlp<double> q({7, 6, 5, 1}, Activation::kRelu);
    q.init(rng, false);
    perturb(q);
    Mlp<double>::Matrix x(7, 9);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::Matrix<double, 1, Eigen::Dynamic> y(9);
    for (Eigen::Index j = 0; j < 9; ++j) y(j) = rng.normal();
    std::vector<double> grad;
    critic_loss_grad<double>(q, x, y, &grad);
    const auto fd = central_differences(q.params(), [&] { return critic_loss_grad<double>(q, x, y, nullptr); });
    worst = std::max(worst, max_rel_error(grad, fd));
  }
  {
    Mlp<double> actor({5, 6, 4}, Activation::kRelu);
    Mlp<double> q1({7, 6, 1}, Activation::kRelu), q2({7, 6, 1}, Activation::kRelu);
    actor.init(rng, false);
    q1.init(rng, false);
    q2.init(rng, false);
    perturb(actor);
    Mlp<double>::Matrix obs(5, 8), noise(2, 8);
    for (Eigen::Index i = 0; i < obs.size(); ++i) obs.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
    for (double alpha : {0.0, 0.2}) {
      std::vector<double> grad;
      actor_loss_grad<double>(actor, q1, q2, obs, noise, alpha, &grad);
      const auto fd = central_differences(actor.params(), [&] {
        return actor_loss_grad<double>(actor, q1, q2, obs, noise, alpha, nullptr);
      });
      worst = std::max(worst, max_rel_error(grad, fd));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0,
          fmt("max relative error %.2e over model NLL, critic and actor gradients in %.2f s", worst, secs)};
}

// ---------------------------------------------------------------------------
// Infoprop properties.

Outcome infoprop_properties() {
  const Fixture& f = fixture();
  std::vector<std::string> failures;

  const OracleModel oracle = f.oracle();
  const RolloutConfig defaults;
  Rng rng(102);
  GenerateStats gs;
  const RolloutBatch out = generate(f.ctx(oracle), f.real, f.rollout(defaults.streams, defaults.t_max), rng, &gs);
  int reached = 0;
  for (int e : gs.emitted) reached += e == defaults.t_max;
  const double frac = static_cast<double>(reached) / static_cast<double>(gs.emitted.size());
  if (frac < 0.99) failures.push_back(fmt("oracle streams at T_max %.3f", frac));

  const OracleModel inflated = f.inflated();
  int late = 0;
  for (double kappa : {1.0, 3.0, 7.5}) {
    const int bound = static_cast<int>(std::ceil(kappa / (0.5 * std::log(11.0))));
    Rng r(103);
    auto states = f.seeds(inflated, 256, r);
    const RolloutConfig cfg = f.rollout(256, defaults.t_max, kappa);
    RolloutBatch sink;
    for (int t = 0; t < bound; ++t) step_rollout(f.ctx(inflated), states, cfg, sink);
    for (const auto& s : states) late += s.alive || s.age > bound;
  }
  if (late > 0) failures.push_back(fmt("%d inflated streams outlived the bound", late));

  Rng mr(104);
  int non_monotone = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> c(kStateDim), sv(kStateDim), dv(kStateDim);
    for (int i = 0; i < kStateDim; ++i) {
      c[i] = mr.uniform(0, 5);
      sv[i] = mr.uniform() < 0.1 ? 0.0 : std::exp(mr.uniform(-20, 5));
      dv[i] = std::exp(mr.uniform(-10, 3));
    }
    const auto next = accumulate_corruption(c, sv, dv);
    for (int i = 0; i < kStateDim; ++i) non_monotone += next[i] < c[i];
  }
  if (non_monotone > 0) failures.push_back(fmt("%d corruption decreases", non_monotone));

  int above = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int e = 1 + static_cast<int>(mr.index(7));
    std::vector<GaussianPrediction> p(static_cast<std::size_t>(e));
    for (auto& g : p) {
      for (int i = 0; i < 3; ++i) {
        g.mean.push_back(mr.uniform(-5, 5));
        g.log_var.push_back(mr.uniform(-10, 0.5));
      }
    }
    const FusedPrediction fp = fuse(p);
    for (int i = 0; i < 3; ++i) {
      double min_var = 1e300;
      for (const auto& g : p) min_var = std::min(min_var, std::exp(g.log_var[static_cast<std::size_t>(i)]));
      above += fp.fused_var[static_cast<std::size_t>(i)] > min_var * (1 + 1e-12);
    }
  }
  if (above > 0) failures.push_back(fmt("%d fused variances above the best member", above));

  if (!failures.empty()) {
    std::string d;
    for (const auto& s : failures) d += (d.empty() ? "" : "; ") + s;
    return {false, d};
  }
  return {true, fmt("oracle %.1f%% of %zu streams reach T_max=%d; inflated streams die by the bound; 1e4 "
                    "accumulations monotone; 1e4 fusions within the best member (%zu transitions)",
                    100.0 * frac, gs.emitted.size(), defaults.t_max, out.size())};
}

// ---------------------------------------------------------------------------
// Geometry oracle.

Outcome geometry() {
  const Track t = default_arena();
  const DenseCenterline dense(t);
  Rng rng(105);
  double worst_d = 0.0, worst_s = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double s0 = rng.uniform(0, t.length());
    const double off = rng.uniform(-0.25, 0.25);
    const Vec2 c = t.point_at(s0);
    const double h = t.heading_at(s0);
    const Vec2 p{c.x - off * std::sin(h), c.y + off * std::cos(h)};
    const auto [s_oracle, d_oracle] = dense.frame(p);
    const TrackFrame f = t.project(p);
    worst_d = std::max(worst_d, std::abs(f.d - d_oracle));
    worst_s = std::max(worst_s, std::abs(progress(t, s_oracle, f.s)));
  }
  const std::vector<Vec2> wp{{0, 0}, {10, 0}, {10, 1}, {0, 1}};
  const Track straight = build_track(wp, 0.2, 0.01);
  const auto base = observe(straight, Pose{1.0, 0.0, 0.0}, 30, 0.1);
  const auto rot = observe(straight, Pose{1.0, 0.0, std::numbers::pi / 2}, 30, 0.1);
  bool examples = base.size() == 30 && rot.size() == 30;
  for (std::size_t k = 0; examples && k < 30; ++k) {
    examples = std::abs(base[k].bearing) < 1e-9 && std::abs(base[k].range - 0.1 * static_cast<double>(k + 1)) < 1e-9 &&
               std::abs(wrap_angle(rot[k].bearing - (base[k].bearing - std::numbers::pi / 2))) < 1e-9 &&
               std::abs(rot[k].range - base[k].range) < 1e-9;
  }
  return {worst_d < 1e-3 && worst_s < 1e-3 && examples,
          fmt("1000 points: max |d - oracle| %.2e m, max |s - oracle| %.2e m; observe examples %s", worst_d, worst_s,
              examples ? "match" : "differ")};
}

// ---------------------------------------------------------------------------
// Protocol.

Bytes random_bytes(std::size_t n, Rng& rng) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng.next_u64());
  return b;
}

std::string codec_checks() {
  Rng rng(106);
  Bytes stream;
  std::vector<Frame> sent;
  for (int k = 0; k < 100000; ++k) {
    Frame f{static_cast<MsgType>(1 + rng.index(7)), random_bytes(rng.index(64), rng)};
    const Bytes e = encode_frame(f.type, f.payload);
    if (!(decode_frame(e) == f)) return fmt("frame %d does not round trip", k);
    stream.insert(stream.end(), e.begin(), e.end());
    sent.push_back(std::move(f));
  }
  FrameReader reader;
  std::size_t got = 0, pos = 0;
  while (pos < stream.size()) {
    const std::size_t n = std::min(stream.size() - pos, 1 + rng.index(300));
    reader.feed(std::span<const std::uint8_t>(stream.data() + pos, n));
    pos += n;
    while (auto f = reader.next()) {
      if (got >= sent.size() || !(*f == sent[got])) return fmt("stream frame %zu differs", got);
      ++got;
    }
  }
  if (got != sent.size()) return "stream lost frames";

  Bytes clean;
  for (int k = 0; k < 8; ++k) {
    Trajectory t;
    t.id = static_cast<std::uint64_t>(k);
    t.steps.resize(3);
    const Frame f = k == 0 ? Frame{MsgType::kHello, encode_hello({Role::kTrainer, kProtoVersion})}
                           : Frame{MsgType::kTrajUpload, encode_trajectory(t)};
    const Bytes e = encode_frame(f.type, f.payload);
    clean.insert(clean.end(), e.begin(), e.end());
  }
  long other = 0;
  for (int trial = 0; trial < 1000000; ++trial) {
    Bytes b = clean;
    const int edits = 1 + static_cast<int>(rng.index(4));
    for (int e = 0; e < edits && !b.empty(); ++e) {
      const std::size_t at = rng.index(b.size());
      switch (rng.index(5)) {
        case 0: b[at] ^= static_cast<std::uint8_t>(1u << rng.index(8)); break;
        case 1: b[at] = static_cast<std::uint8_t>(rng.next_u64()); break;
        case 2: b.insert(b.begin() + static_cast<std::ptrdiff_t>(at), static_cast<std::uint8_t>(rng.next_u64())); break;
        case 3: b.erase(b.begin() + static_cast<std::ptrdiff_t>(at)); break;
        default: b.resize(at); break;
      }
    }
    try {
      FrameReader r;
      r.feed(b);
      while (auto f = r.next()) validate_payload(*f);
    } catch (const Error&) {
    } catch (...) {
      ++other;
    }
  }
  if (other > 0) return fmt("%ld fuzzed streams raised undefined errors", other);
  return {};
}

std::string loopback_checks(std::string& detail) {
  const fs::path dir = make_temp_dir("acceptance_procs");
  const int base = 20000 + static_cast<int>(getpid() % 20000);
  RunConfig cfg = tiny_config(dir / "run");
  cfg.collector_port = base + 2;
  cfg.trainer_port = base + 3;
  const std::string conf = (dir / "run.cfg").string();
  {
    std::ofstream out(conf);
    out << dump_config(cfg);
  }
  const fs::path run = dir / "run";
  const auto ledger = [&] { return RunLedger::replay(run / "ledger.log"); };
  const pid_t bk = spawn({kCli, "--config", conf, "bookkeeper"}, dir / "bookkeeper.log");
  const pid_t tr = spawn({kCli, "--config", conf, "trainer", "--rounds", "2"}, dir / "trainer.log");
  pid_t co = spawn({kCli, "--config", conf, "collector"}, dir / "collector.log");
  // Kill the collector mid-run; its replacement re-sends from the spool.
  if (!wait_until([&] { return ledger().entries.size() >= 3; }, 120'000)) return "no uploads arrived";
  kill(co, SIGKILL);
  wait_exit(co, 10'000);
  co = spawn({kCli, "--config", conf, "collector"}, dir / "collector2.log");
  if (wait_exit(tr, 300'000) != 0) return "trainer did not finish 2 rounds";
  if (!wait_until([&] { return ledger().deployed_checkpoint == 2; }, 60'000)) return "checkpoint 2 never deployed";
  kill(co, SIGTERM);
  if (wait_exit(co, 30'000) != 0) return "collector did not exit cleanly";

  const std::string text = read_text(run / "ledger.log");
  std::uint64_t last_ckpt = 0, last_id = 0;
  bool first = true;
  for (const auto& l : lines_of(text)) {
    if (l.rfind("C ", 0) == 0) {
      const std::uint64_t c = std::stoull(l.substr(2));
      if (c <= last_ckpt) return "checkpoint ids not monotone";
      last_ckpt = c;
    } else if (l.rfind("T ", 0) == 0) {
      const std::uint64_t id = std::stoull(l.substr(2)) & ~kWarmStartBit;
      if (!first && id <= last_id) return "trajectory ids not monotone";
      first = false;
      last_id = id;
    }
  }
  const std::size_t rows = lines_of(read_text(run / "metrics.csv")).size() - 1;
  if (rows < 2) return "fewer than 2 metrics rows";

  // A re-upload of a stored trajectory is acknowledged and ignored.
  const LedgerState before = ledger();
  {
    const auto& e = before.entries.front();
    const Bytes bytes = read_file(run / "traj" / (std::to_string(e.traj_id) + ".wtrj"));
    Connection c(connect_tcp("127.0.0.1", cfg.collector_port));
    c.send(MsgType::kHello, encode_hello(Hello{Role::kCollector, kProtoVersion}));
    if (!c.recv(5000)) return "no HELLO reply";
    c.send(MsgType::kTrajUpload, bytes);
    std::optional<Frame> f;
    do f = c.recv(5000);
    while (f && f->type != MsgType::kTrajAck);
    if (!f || decode_traj_ack(f->payload) != TrajAck{e.traj_id, false}) return "re-upload not acknowledged as a duplicate";
  }
  if (!(ledger() == before)) return "re-upload changed the ledger";

  // Crash the bookkeeper; a restarted one recovers the same ledger.
  const std::string before_text = read_text(run / "ledger.log");
  kill(bk, SIGKILL);
  wait_exit(bk, 10'000);
  const pid_t bk2 = spawn({kCli, "--config", conf, "bookkeeper"}, dir / "bookkeeper2.log");
  std::this_thread::sleep_for(std::chrono::milliseconds(500));
  kill(bk2, SIGTERM);
  if (wait_exit(bk2, 10'000) != 0) return "restarted bookkeeper did not exit cleanly";
  if (!(RunLedger::replay(run / "ledger.log") == before) || read_text(run / "ledger.log") != before_text)
    return "recovered ledger differs";
  detail = fmt("%zu rounds, %zu trajectories, checkpoints 1..%llu", rows, before.entries.size(),
               static_cast<unsigned long long>(last_ckpt));
  fs::remove_all(dir);
  return {};
}

Outcome protocol() {
  if (std::string e = codec_checks(); !e.empty()) return {false, e};
  std::string detail;
  if (std::string e = loopback_checks(detail); !e.empty()) return {false, e};
  return {true, "1e5 frames round trip; 1e6 fuzzed streams raise only defined errors; 3-process loopback: " + detail +
                    ", collector killed and restarted, duplicate re-upload ignored, bookkeeper crash recovered exactly"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<std::string> only;
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suites", gradients},
      {"infoprop-properties", infoprop_properties},
      {"geometry-oracle", geometry},
      {"protocol", protocol},
      {"desk-scale-learning", desk_scale_learning},
      {"speed-up", speed_up},
      {"lap-count", lap_count},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
