#include <doctest.h>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "dynarace/gateway.hpp"
#include "dynarace/services.hpp"
#include "dynarace/trajectory_log.hpp"

using namespace dynarace;
namespace fs = std::filesystem;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

fs::path fresh_dir(const std::string& tag) {
  std::string tmpl = (fs::temp_directory_path() / ("dynarace_gw_" + tag + "_XXXXXX")).string();
  REQUIRE(mkdtemp(tmpl.data()) != nullptr);
  return tmpl;
}

std::string cmd_json(double speed, double steer, bool recording) {
  return json{{"type", "cmd"}, {"speed_ref", speed}, {"steer_ref", steer}, {"recording", recording}, {"timestamp", 0.0}}
      .dump();
}

template <typename F>
bool wait_until(F&& pred, int timeout_ms) {
  const auto end = Clock::now() + std::chrono::milliseconds(timeout_ms);
  while (Clock::now() < end) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  return pred();
}

class WsClient {
 public:
  explicit WsClient(int port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1:" + std::to_string(port), "/ws");
    ws_.text(true);
  }
  ~WsClient() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }
  void send(const std::string& text) { ws_.write(asio::buffer(text)); }
  std::string read() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return beast::buffers_to_string(buf.data());
  }

 private:
  asio::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

std::pair<int, std::string> http_get(int port, const std::string& target) {
  asio::io_context ioc;
  tcp::socket sock(ioc);
  tcp::resolver resolver(ioc);
  asio::connect(sock, resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> req(http::verb::get, target, 11);
  req.set(http::field::host, "127.0.0.1");
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  beast::error_code ec;
  http::read(sock, buf, res, ec);
  return {static_cast<int>(res.result_int()), res.body()};
}

}  // namespace

TEST_CASE("command parsing and clamping") {
  const auto c = parse_command(cmd_json(0.2, -0.5, true));
  REQUIRE(c);
  CHECK(c->speed_ref == 0.2);
  CHECK(c->steer_ref == -0.5);
  CHECK(c->recording);
  CHECK_FALSE(parse_command("not json"));
  CHECK_FALSE(parse_command(R"({"type":"telemetry","speed_ref":0,"steer_ref":0,"recording":true})"));
  CHECK_FALSE(parse_command(R"({"type":"cmd","speed_ref":"fast","steer_ref":0,"recording":true})"));
  CHECK_FALSE(parse_command(R"({"type":"cmd","speed_ref":0.1,"steer_ref":0})"));
  CHECK_FALSE(parse_command(R"([1,2,3])"));
  const TeleopCommand k = clamp_command({5.0, -3.0, true, 1.0}, 1.0);
  CHECK(k == TeleopCommand{1.0, -1.0, true, 1.0});
  CHECK(clamp_command({-5.0, 0.3, false, 0.0}, 0.5) == TeleopCommand{-0.5, 0.3, false, 0.0});
}

TEST_CASE("telemetry frames carry the documented fields") {
  TelemetryFrame f;
  f.est.v[kSpeed] = 0.3;
  f.s = 1.5;
  f.laps = 2;
  f.metrics = {{"round", "4"}};
  f.checkpoint_id = 7;
  const json j = json::parse(telemetry_json(f));
  CHECK(j["type"] == "telemetry");
  CHECK(j["est_state"].size() == static_cast<std::size_t>(kStateDim));
  CHECK(j["est_state"][kSpeed] == 0.3);
  CHECK(j["s"] == 1.5);
  CHECK(j["laps"] == 2);
  CHECK(j["metrics"]["round"] == "4");
  CHECK(j["checkpoint_id"] == 7);
  CHECK(j.contains("d"));
  CHECK(j.contains("reward"));
}

TEST_CASE("dead-man zeroes the refs and keeps recording") {
  TeleopGateway gw("127.0.0.1", 0, "");
  const auto t0 = Clock::now();
  CHECK(gw.refs(t0) == TeleopCommand{});
  gw.on_message(cmd_json(0.4, 0.2, true), t0);
  CHECK(gw.refs(t0 + std::chrono::milliseconds(100)).speed_ref == 0.4);
  CHECK(gw.refs(t0 + std::chrono::milliseconds(499)).steer_ref == 0.2);
  const TeleopCommand late = gw.refs(t0 + std::chrono::milliseconds(600));
  CHECK(late.speed_ref == 0.0);
  CHECK(late.steer_ref == 0.0);
  CHECK(late.recording);
  gw.on_message(cmd_json(0.1, 0.0, false), t0 + std::chrono::milliseconds(700));
  CHECK(gw.refs(t0 + std::chrono::milliseconds(800)).speed_ref == 0.1);
}

TEST_CASE("malformed messages are counted and change nothing") {
  TeleopGateway gw("127.0.0.1", 0, "", 0.5);
  const auto t0 = Clock::now();
  gw.on_message(cmd_json(0.3, 0.1, true), t0);
  const TeleopCommand before = gw.refs(t0);
  CHECK(before.speed_ref == 0.3);
  for (const char* bad : {"{", "{}", R"({"type":"cmd"})", "\xff\xfe", R"({"type":"cmd","speed_ref":1e999,"steer_ref":0,"recording":true})"}) {
    gw.on_message(bad, t0 + std::chrono::milliseconds(100));
  }
  CHECK(gw.malformed_count() == 5);
  CHECK(gw.commands_received() == 1);
  CHECK(gw.refs(t0 + std::chrono::milliseconds(450)) == before);
  CHECK(gw.refs(t0 + std::chrono::milliseconds(550)).speed_ref == 0.0);
  gw.on_message(cmd_json(0.9, 0.0, true), t0);
  CHECK(gw.refs(t0).speed_ref == 0.5);
}

TEST_CASE("telemetry is capped at 30 Hz") {
  TeleopGateway gw("127.0.0.1", 0, "");
  const auto t0 = Clock::now();
  TelemetryFrame f;
  for (int ms = 0; ms < 1000; ++ms) gw.publish(f, t0 + std::chrono::milliseconds(ms));
  // Accepted frames are at least 1/30 s apart, so one second admits at most 30.
  CHECK(gw.frames_sent() <= 30);
  CHECK(gw.frames_sent() >= 29);
}

TEST_CASE("websocket round trip: commands in, telemetry out") {
  TeleopGateway gw("127.0.0.1", 0, "");
  WsClient client(gw.port());
  CHECK(wait_until([&] { return gw.clients() == 1; }, 2000));

  const auto sent = Clock::now();
  client.send(cmd_json(0.25, -0.3, true));
  REQUIRE(wait_until([&] { return gw.refs().speed_ref == 0.25; }, 1000));
  const double latency = std::chrono::duration<double>(Clock::now() - sent).count();
  CHECK(latency < 0.1);
  CHECK(gw.refs().steer_ref == -0.3);
  CHECK(gw.refs().recording);

  client.send("garbage");
  CHECK(wait_until([&] { return gw.malformed_count() == 1; }, 1000));
  CHECK(gw.refs().speed_ref == 0.25);

  std::vector<json> got;
  std::thread reader([&] {
    for (int k = 0; k < 3; ++k) got.push_back(json::parse(client.read()));
  });
  TelemetryFrame f;
  f.laps = 1;
  f.checkpoint_id = 3;
  for (int k = 0; k < 100 && got.size() < 3; ++k) {
    gw.publish(f);
    std::this_thread::sleep_for(std::chrono::milliseconds(40));
  }
  reader.join();
  REQUIRE(got.size() == 3);
  for (const json& j : got) {
    CHECK(j["type"] == "telemetry");
    CHECK(j["laps"] == 1);
    CHECK(j["checkpoint_id"] == 3);
  }
}

TEST_CASE("static files are served from the assets directory only") {
  const fs::path dir = fresh_dir("assets");
  fs::create_directories(dir / "www");
  std::ofstream(dir / "www" / "index.html") << "<html>teleop</html>";
  std::ofstream(dir / "secret.txt") << "hidden";
  TeleopGateway gw("127.0.0.1", 0, (dir / "www").string());
  const auto [code, body] = http_get(gw.port(), "/");
  CHECK(code == 200);
  CHECK(body == "<html>teleop</html>");
  CHECK(http_get(gw.port(), "/index.html?x=1").first == 200);
  CHECK(http_get(gw.port(), "/missing.js").first == 404);
  CHECK(http_get(gw.port(), "/../secret.txt").first == 404);
  CHECK(http_get(gw.port(), "/%2e%2e/secret.txt").first == 404);
  gw.stop();
  fs::remove_all(dir);
}

TEST_CASE("teleop drives become warm-start trajectories in the ledger") {
  const fs::path dir = fresh_dir("teleop");
  RunConfig cfg;
  cfg.storage_dir = dir.string();
  cfg.collector_port = cfg.trainer_port = 0;
  cfg.episode_steps = 500;
  Bookkeeper bk(cfg);
  bk.start();
  cfg.collector_port = bk.collector_port();

  TeleopGateway gw("127.0.0.1", 0, "");
  WsClient client(gw.port());
  std::atomic<bool> driving{true};
  // The operator keeps the dead-man alive by re-sending the command.
  std::thread op([&] {
    while (driving) {
      client.send(cmd_json(0.15, 0.0, true));
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  REQUIRE(wait_until([&] { return gw.refs().recording; }, 2000));

  CollectorOptions opts;
  opts.gateway = &gw;
  opts.stop_after_sim_seconds = 20.0;
  const Track track = default_arena();
  Collector collector(cfg, track, opts);
  collector.run();
  driving = false;
  op.join();

  const LedgerState st = bk.ledger_state();
  REQUIRE(!st.entries.empty());
  CHECK(st.total_sim_seconds() >= 20.0 - 1e-9);
  CHECK(gw.frames_sent() > 0);
  double speed_sum = 0.0;
  long n = 0;
  for (const LedgerEntry& e : st.entries) {
    CHECK(is_warm_start(e.traj_id));
    const Trajectory t = decode_trajectory(read_file(dir / "traj" / (std::to_string(e.traj_id) + ".wtrj")));
    // Skip the first second, where the speed loop is still spinning up.
    for (std::size_t k = 100; k < t.steps.size(); ++k) {
      speed_sum += t.steps[k].est_state.speed();
      ++n;
    }
  }
  REQUIRE(n > 0);
  CHECK(speed_sum / static_cast<double>(n) == doctest::Approx(0.15).epsilon(0.2));
  bk.stop();
  gw.stop();
  fs::remove_all(dir);
}
