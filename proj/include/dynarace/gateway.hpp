#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "dynarace/plant.hpp"

namespace dynarace {

inline constexpr double kDeadManSeconds = 0.5;
inline constexpr double kTelemetryMaxHz = 30.0;

struct TeleopCommand {
  double speed_ref = 0.0;  // m/s
  double steer_ref = 0.0;  // [-1, 1]
  bool recording = false;
  double timestamp = 0.0;  // ms, client clock
  friend bool operator==(const TeleopCommand&, const TeleopCommand&) = default;
};

struct TelemetryFrame {
  EstimatedState est;
  double s = 0.0;
  double d = 0.0;
  int laps = 0;
  double reward = 0.0;
  std::map<std::string, std::string> metrics;
  std::uint64_t checkpoint_id = 0;
};

// {"type":"cmd","speed_ref":..,"steer_ref":..,"recording":..,"timestamp":..};
// nullopt for anything else.
std::optional<TeleopCommand> parse_command(const std::string& text);
std::string telemetry_json(const TelemetryFrame& f);
TeleopCommand clamp_command(TeleopCommand c, double max_speed);

// WebSocket endpoint at /ws plus static files, on one port. Commands are
// applied by the collector at step boundaries through refs().
class TeleopGateway {
 public:
  using Clock = std::chrono::steady_clock;

  TeleopGateway(const std::string& host, int port, std::string assets_dir, double max_speed = 1.0);
  ~TeleopGateway();
  TeleopGateway(const TeleopGateway&) = delete;
  TeleopGateway& operator=(const TeleopGateway&) = delete;

  int port() const;
  void stop();

  // Latest clamped command; zero refs (recording kept) once it is older
  // than kDeadManSeconds.
  TeleopCommand refs(Clock::time_point now = Clock::now()) const;
  // Broadcasts to connected clients, dropping frames above kTelemetryMaxHz.
  void publish(const TelemetryFrame& f, Clock::time_point now = Clock::now());
  void set_metrics(std::map<std::string, std::string> m);
  std::map<std::string, std::string> metrics() const;

  std::uint64_t malformed_count() const { return malformed_.load(); }
  std::uint64_t commands_received() const { return commands_.load(); }
  std::uint64_t frames_sent() const { return frames_.load(); }
  std::size_t clients() const;

  // Applies one JSON text message as if a client had sent it.
  void on_message(const std::string& text, Clock::time_point now = Clock::now());

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  double max_speed_;
  mutable std::mutex mu_;
  TeleopCommand latest_;
  std::optional<Clock::time_point> last_command_;
  std::optional<Clock::time_point> last_frame_;
  std::map<std::string, std::string> metrics_;
  std::atomic<std::uint64_t> malformed_{0}, commands_{0}, frames_{0};
};

}  // namespace dynarace
