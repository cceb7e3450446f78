#include "dynarace/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dynarace {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::kBadConfig, "cannot parse value '" + value + "' for key " + key);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) bad_value(key, v);
  return x;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int x{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return x;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

// Shortest text that parses back to the same double.
std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

struct Entry {
  std::string name;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Member>
Entry dbl(std::string name, std::string doc, Member member) {
  return {name, std::move(doc), [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_double(name, v); }};
}

template <typename Int, typename Member>
Entry integer(std::string name, std::string doc, Member member) {
  return {name, std::move(doc),
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_int<Int>(name, v); }};
}

template <typename Member>
Entry str(std::string name, std::string doc, Member member) {
  return {name, std::move(doc), [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

template <typename Member>
Entry int_list(std::string name, std::string doc, Member member) {
  return {name, std::move(doc),
          [member](const RunConfig& c) {
            std::string s;
            for (int h : member(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + std::to_string(h);
            return s;
          },
          [member, name](RunConfig& c, const std::string& v) {
            std::vector<int> out;
            for (const auto& item : split_list(v)) out.push_back(parse_int<int>(name, item));
            member(c) = out;
          }};
}

#define FIELD(expr) [](RunConfig & c) -> auto& { return c.expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back(integer<std::uint64_t>("seed", "master random seed", FIELD(seed)));
    t.push_back(str("storage_dir", "bookkeeper storage directory", FIELD(storage_dir)));
    t.push_back(str("host", "bookkeeper host for collector and trainer", FIELD(host)));
    t.push_back(integer<int>("collector_port", "bookkeeper port for the collector", FIELD(collector_port)));
    t.push_back(integer<int>("trainer_port", "bookkeeper port for the trainer", FIELD(trainer_port)));
    t.push_back(integer<int>("gateway_port", "teleop WebSocket/HTTP port", FIELD(gateway_port)));
    t.push_back(str("track_file", "track file; empty selects the built-in arena", FIELD(track_file)));
    t.push_back(str("assets_dir", "static files served by the teleop gateway", FIELD(assets_dir)));

    t.push_back(dbl("plant.c_tau", "drive torque to acceleration gain", FIELD(plant.c_tau)));
    t.push_back(dbl("plant.c_v", "forward speed damping (1/s)", FIELD(plant.c_v)));
    t.push_back(dbl("plant.g_l", "gravity roll gain (1/s^2)", FIELD(plant.g_l)));
    t.push_back(dbl("plant.j_b", "reaction torque to roll acceleration gain", FIELD(plant.j_b)));
    t.push_back(dbl("plant.k_cent", "centripetal roll coupling", FIELD(plant.k_cent)));
    t.push_back(dbl("plant.j_r", "reaction torque to wheel acceleration gain", FIELD(plant.j_r)));
    t.push_back(dbl("plant.k_lean", "lean-steered yaw gain", FIELD(plant.k_lean)));
    t.push_back(dbl("plant.k_gyro", "gyroscopic yaw coupling", FIELD(plant.k_gyro)));
    t.push_back(dbl("plant.c_psi", "yaw rate damping (1/s)", FIELD(plant.c_psi)));
    t.push_back(dbl("plant.mu_g", "lateral grip limit (m/s^2)", FIELD(plant.mu_g)));
    t.push_back(dbl("plant.c_slip", "slip speed decay (1/s)", FIELD(plant.c_slip)));
    t.push_back(dbl("plant.roll_crash", "crash roll angle (rad)", FIELD(plant.roll_crash)));
    t.push_back(dbl("plant.torque_max", "torque bound (N m)", FIELD(plant.torque_max)));
    t.push_back(dbl("plant.dt", "control period (s)", FIELD(plant.dt)));
    t.push_back(dbl("plant.process_noise", "std of additive acceleration noise", FIELD(plant.process_noise)));
    t.push_back(dbl("plant.est_beta", "estimator low-pass gain in (0, 1]", FIELD(plant.est_beta)));
    t.push_back(dbl("plant.est_sigma", "estimator noise std per normalized dimension", FIELD(plant.est_sigma)));
    {
      Entry e{"plant.est_scale", "per-dimension estimator noise scale (9 values)",
              [](const RunConfig& c) {
                std::string s;
                for (double x : c.plant.est_scale) s += (s.empty() ? "" : ",") + format_double(x);
                return s;
              },
              [](RunConfig& c, const std::string& v) {
                const auto items = split_list(v);
                if (items.size() != kStateDim) bad_value("plant.est_scale", v);
                for (std::size_t i = 0; i < kStateDim; ++i) c.plant.est_scale[i] = parse_double("plant.est_scale", items[i]);
              }};
      t.push_back(std::move(e));
    }
    t.push_back(dbl("plant.w_v", "reward weight on along-track speed", FIELD(plant.w_v)));
    t.push_back(dbl("plant.w_d", "reward weight on squared lateral offset", FIELD(plant.w_d)));
    t.push_back(dbl("plant.r_term", "terminal penalty", FIELD(plant.r_term)));

    t.push_back(dbl("assist.k_steer", "lean reference at full steer (rad)", FIELD(assist.k_steer)));
    t.push_back(dbl("assist.kp_roll", "roll proportional gain", FIELD(assist.kp_roll)));
    t.push_back(dbl("assist.kd_roll", "roll derivative gain", FIELD(assist.kd_roll)));
    t.push_back(dbl("assist.kp_speed", "speed proportional gain", FIELD(assist.kp_speed)));
    t.push_back(dbl("assist.ki_speed", "speed integral gain", FIELD(assist.ki_speed)));
    t.push_back(dbl("warmstart_speed", "scripted warm-start speed reference (m/s)", FIELD(warmstart_speed)));
    t.push_back(dbl("warmstart_seconds", "assist-driven data before learning starts (s)", FIELD(warmstart_seconds)));
    t.push_back(integer<int>("episode_steps", "collector episode length cap (steps)", FIELD(episode_steps)));
    t.push_back(dbl("round_sim_seconds", "new collected seconds per training round", FIELD(round_sim_seconds)));
    t.push_back(dbl("max_sim_seconds", "total collection budget for `all` (s)", FIELD(max_sim_seconds)));
    t.push_back(integer<int>("rounds", "round limit for `all`; 0 = budget only", FIELD(rounds)));

    t.push_back(integer<int>("model.history", "history length H", FIELD(model.history)));
    t.push_back(integer<int>("model.ensemble", "ensemble size E", FIELD(model.ensemble)));
    t.push_back(int_list("model.hidden", "hidden layer widths", FIELD(model.hidden)));
    t.push_back(dbl("model.lv_min", "lower log-variance bound", FIELD(model.lv_min)));
    t.push_back(dbl("model.lv_max", "upper log-variance bound", FIELD(model.lv_max)));
    t.push_back(dbl("model.lr", "model learning rate", FIELD(model.adam.lr)));
    t.push_back(integer<int>("model.batch", "model minibatch size", FIELD(model.batch)));
    t.push_back(integer<int>("model.epochs", "model epochs per round", FIELD(model_epochs)));
    t.push_back(integer<int>("model.first_epochs", "model epochs in the first round", FIELD(model_first_epochs)));

    t.push_back(dbl("rollout.kappa", "corruption budget (nats)", FIELD(rollout.kappa)));
    t.push_back(integer<int>("rollout.t_max", "rollout horizon (steps)", FIELD(rollout.t_max)));
    t.push_back(integer<int>("rollout.streams", "parallel rollout streams R", FIELD(rollout.streams)));
    t.push_back(integer<int>("rollout.chunk", "streams per batched chunk", FIELD(rollout.chunk)));
    t.push_back(dbl("rollout.lookahead_spacing", "spacing of the observed track points (m)", FIELD(rollout.lookahead_spacing)));

    t.push_back(int_list("sac.hidden", "actor and critic hidden widths", FIELD(sac.hidden)));
    t.push_back(dbl("sac.actor_lr", "actor learning rate", FIELD(sac.actor_adam.lr)));
    t.push_back(dbl("sac.critic_lr", "critic learning rate", FIELD(sac.critic_adam.lr)));
    t.push_back(dbl("sac.alpha_lr", "temperature learning rate", FIELD(sac.alpha_adam.lr)));
    t.push_back(dbl("sac.gamma", "discount", FIELD(sac.gamma)));
    t.push_back(dbl("sac.polyak", "target averaging rate", FIELD(sac.polyak)));
    t.push_back(dbl("sac.target_entropy", "temperature target entropy", FIELD(sac.target_entropy)));
    t.push_back(dbl("sac.init_alpha", "initial temperature", FIELD(sac.init_alpha)));
    t.push_back(integer<int>("sac.batch", "policy minibatch size", FIELD(sac.batch)));
    t.push_back(dbl("sac.ratio_real", "real fraction of each minibatch", FIELD(sac.ratio_real)));
    t.push_back(integer<int>("sac.updates", "policy updates per round", FIELD(sac_updates)));
    t.push_back(integer<std::size_t>("sac.real_capacity", "real replay capacity", FIELD(real_capacity)));
    t.push_back(integer<std::size_t>("sac.synthetic_capacity", "synthetic replay capacity", FIELD(synthetic_capacity)));

    t.push_back(dbl("eval_seconds", "per-round evaluation duration (s)", FIELD(eval_seconds)));
    t.push_back(integer<int>("threads", "worker threads; 0 = hardware concurrency", FIELD(threads)));
    return t;
  }();
  return table;
}

#undef FIELD

}  // namespace

void RunConfig::validate() const {
  plant.validate();
  model.validate();
  sac.validate();
  RolloutConfig r = rollout;
  r.data_var.assign(static_cast<std::size_t>(model.state_dim), 1.0);
  r.validate(model.state_dim);
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kBadConfig, what);
  };
  require(collector_port > 0 && collector_port < 65536, "collector_port out of range");
  require(trainer_port > 0 && trainer_port < 65536, "trainer_port out of range");
  require(gateway_port > 0 && gateway_port < 65536, "gateway_port out of range");
  require(warmstart_speed >= 0.0, "warmstart_speed must be >= 0");
  require(warmstart_seconds >= 0.0, "warmstart_seconds must be >= 0");
  require(episode_steps >= 1, "episode_steps must be >= 1");
  require(round_sim_seconds > 0.0, "round_sim_seconds must be > 0");
  require(max_sim_seconds > 0.0, "max_sim_seconds must be > 0");
  require(rounds >= 0, "rounds must be >= 0");
  require(model_epochs >= 0 && model_first_epochs >= 0, "model epochs must be >= 0");
  require(sac_updates >= 0, "sac.updates must be >= 0");
  require(real_capacity >= 1 && synthetic_capacity >= 1, "replay capacities must be >= 1");
  require(eval_seconds >= 0.0, "eval_seconds must be >= 0");
  require(threads >= 0, "threads must be >= 0");
  require(!storage_dir.empty(), "storage_dir must not be empty");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.name == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw Error(ErrorCode::kBadConfig, "unknown config key: " + key);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kBadConfig, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (seen.count(key)) {
      throw Error(ErrorCode::kBadConfig, "line " + std::to_string(lineno) + ": duplicate key " + key);
    }
    seen[key] = lineno;
    set_config_value(cfg, key, trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) {
    out += "# " + e.doc + "\n";
    out += e.name + " = " + e.get(cfg) + "\n";
  }
  return out;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back({e.name, e.doc});
    return k;
  }();
  return keys;
}

}  // namespace dynarace
