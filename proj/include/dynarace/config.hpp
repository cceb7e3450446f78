#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dynarace/dynamics_model.hpp"
#include "dynarace/infoprop.hpp"
#include "dynarace/plant.hpp"
#include "dynarace/sac.hpp"

namespace dynarace {

// Every tunable of a run. Loaded from a flat `key = value` file; `#` starts
// a comment. Unknown keys and out-of-range values are rejected at load.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string storage_dir = "run";
  std::string host = "127.0.0.1";
  int collector_port = 7001;
  int trainer_port = 7002;
  int gateway_port = 8080;
  std::string track_file;  // empty: built-in arena
  std::string assets_dir;  // static files served by the teleop gateway

  PlantParams plant;
  AssistGains assist;
  double warmstart_speed = 0.15;
  double warmstart_seconds = 60.0;
  int episode_steps = 2000;

  double round_sim_seconds = 30.0;  // new collector data per training round
  double max_sim_seconds = 900.0;   // `all` stops once this much is collected
  int rounds = 0;                   // `all` stops after this many rounds; 0 = no limit

  ModelConfig model;
  int model_epochs = 4;
  int model_first_epochs = 20;

  RolloutConfig rollout;

  SacConfig sac;
  int sac_updates = 15000;
  std::size_t real_capacity = 1'000'000;
  std::size_t synthetic_capacity = 400'000;

  double eval_seconds = 30.0;
  int threads = 0;

  void validate() const;
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);
std::string dump_config(const RunConfig& cfg);

// Assigns one key; throws BadConfig for unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

struct ConfigKey {
  std::string name;
  std::string doc;
};
const std::vector<ConfigKey>& config_keys();

}  // namespace dynarace
