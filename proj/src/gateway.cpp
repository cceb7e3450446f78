#include "dynarace/gateway.hpp"

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>
#include <deque>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dynarace/error.hpp"

namespace dynarace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;

std::optional<TeleopCommand> parse_command(const std::string& text) {
  const json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object()) return std::nullopt;
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string() || *type != "cmd") return std::nullopt;
  TeleopCommand c;
  const auto num = [&](const char* key, double& out) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_number()) return false;
    out = it->get<double>();
    return std::isfinite(out);
  };
  if (!num("speed_ref", c.speed_ref) || !num("steer_ref", c.steer_ref)) return std::nullopt;
  const auto rec = j.find("recording");
  if (rec == j.end() || !rec->is_boolean()) return std::nullopt;
  c.recording = rec->get<bool>();
  if (j.contains("timestamp") && !num("timestamp", c.timestamp)) return std::nullopt;
  return c;
}

std::string telemetry_json(const TelemetryFrame& f) {
  json j;
  j["type"] = "telemetry";
  j["est_state"] = json::array();
  for (double x : f.est.v) j["est_state"].push_back(x);
  j["s"] = f.s;
  j["d"] = f.d;
  j["laps"] = f.laps;
  j["reward"] = f.reward;
  j["metrics"] = json::object();
  for (const auto& [k, v] : f.metrics) j["metrics"][k] = v;
  j["checkpoint_id"] = f.checkpoint_id;
  return j.dump();
}

TeleopCommand clamp_command(TeleopCommand c, double max_speed) {
  c.speed_ref = std::clamp(c.speed_ref, -max_speed, max_speed);
  c.steer_ref = std::clamp(c.steer_ref, -1.0, 1.0);
  return c;
}

namespace {

std::string mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

}  // namespace

struct TeleopGateway::Impl {
  class WsSession;
  class HttpSession;

  Impl(TeleopGateway& owner, const std::string& host, int port, std::string assets)
      : gw(owner), acceptor(ioc), assets_dir(std::move(assets)) {
    beast::error_code ec;
    const tcp::endpoint ep(asio::ip::make_address(host, ec), static_cast<unsigned short>(port));
    if (ec) throw Error(ErrorCode::kBadConfig, "bad gateway host " + host);
    acceptor.open(ep.protocol(), ec);
    if (!ec) acceptor.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor.bind(ep, ec);
    if (!ec) acceptor.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw Error(ErrorCode::kConnectionLost, "gateway cannot listen: " + ec.message());
    do_accept();
    thread = std::thread([this] { ioc.run(); });
  }

  void do_accept();
  void broadcast(std::shared_ptr<const std::string> msg);

  TeleopGateway& gw;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::string assets_dir;
  std::set<std::shared_ptr<WsSession>> sessions;  // io thread only
  std::atomic<std::size_t> n_sessions{0};
  std::thread thread;
};

class TeleopGateway::Impl::WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(Impl& impl, tcp::socket s) : impl_(impl), ws_(std::move(s)) {}

  void start(http::request<http::string_body> req) {
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->impl_.sessions.insert(self);
      self->impl_.n_sessions = self->impl_.sessions.size();
      self->read();
    });
  }

  void send(std::shared_ptr<const std::string> msg) {
    // Telemetry is latest-wins: keep at most one queued frame behind the one in flight.
    if (queue_.size() >= 2) queue_.pop_back();
    queue_.push_back(std::move(msg));
    if (queue_.size() == 1) write();
  }

  void close() {
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->impl_.sessions.erase(self);
        self->impl_.n_sessions = self->impl_.sessions.size();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buf_.data());
      self->buf_.consume(self->buf_.size());
      self->impl_.gw.on_message(text);
      self->read();
    });
  }

  void write() {
    ws_.async_write(asio::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  Impl& impl_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buf_;
  std::deque<std::shared_ptr<const std::string>> queue_;
};

class TeleopGateway::Impl::HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(Impl& impl, tcp::socket s) : impl_(impl), stream_(std::move(s)) {}

  void start() {
    http::async_read(stream_, buf_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (!ec) self->handle();
    });
  }

 private:
  void handle() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/ws") {
        std::make_shared<WsSession>(impl_, stream_.release_socket())->start(std::move(req_));
      }
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(false);
    std::string target(req_.target());
    if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (target == "/") target = "/index.html";
    const std::filesystem::path path = std::filesystem::path(impl_.assets_dir) / target.substr(1);
    std::ifstream in(path, std::ios::binary);
    if (req_.method() != http::verb::get || impl_.assets_dir.empty() || target.find("..") != std::string::npos || !in) {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found\n";
    } else {
      std::stringstream ss;
      ss << in.rdbuf();
      res->result(http::status::ok);
      res->set(http::field::content_type, mime_type(path));
      res->body() = ss.str();
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  Impl& impl_;
  beast::tcp_stream stream_;
  beast::flat_buffer buf_;
  http::request<http::string_body> req_;
};

void TeleopGateway::Impl::do_accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket s) {
    if (ec) return;
    std::make_shared<HttpSession>(*this, std::move(s))->start();
    do_accept();
  });
}

void TeleopGateway::Impl::broadcast(std::shared_ptr<const std::string> msg) {
  asio::post(ioc, [this, msg] {
    for (const auto& s : sessions) s->send(msg);
  });
}

TeleopGateway::TeleopGateway(const std::string& host, int port, std::string assets_dir, double max_speed)
    : max_speed_(max_speed) {
  impl_ = std::make_unique<Impl>(*this, host, port, std::move(assets_dir));
}

TeleopGateway::~TeleopGateway() { stop(); }

int TeleopGateway::port() const { return impl_->acceptor.local_endpoint().port(); }

void TeleopGateway::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  asio::post(impl_->ioc, [impl = impl_.get()] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    for (const auto& s : impl->sessions) s->close();
    impl->sessions.clear();
    impl->n_sessions = 0;
  });
  impl_->ioc.stop();
  impl_->thread.join();
}

std::size_t TeleopGateway::clients() const { return impl_->n_sessions.load(); }

void TeleopGateway::on_message(const std::string& text, Clock::time_point now) {
  const auto cmd = parse_command(text);
  if (!cmd) {
    malformed_ += 1;
    return;
  }
  std::lock_guard lock(mu_);
  latest_ = clamp_command(*cmd, max_speed_);
  last_command_ = now;
  commands_ += 1;
}

TeleopCommand TeleopGateway::refs(Clock::time_point now) const {
  std::lock_guard lock(mu_);
  TeleopCommand c = latest_;
  if (!last_command_ || std::chrono::duration<double>(now - *last_command_).count() > kDeadManSeconds) {
    c.speed_ref = 0.0;
    c.steer_ref = 0.0;
  }
  return c;
}

void TeleopGateway::publish(const TelemetryFrame& f, Clock::time_point now) {
  {
    std::lock_guard lock(mu_);
    if (last_frame_ && std::chrono::duration<double>(now - *last_frame_).count() < 1.0 / kTelemetryMaxHz) return;
    last_frame_ = now;
  }
  frames_ += 1;
  impl_->broadcast(std::make_shared<const std::string>(telemetry_json(f)));
}

void TeleopGateway::set_metrics(std::map<std::string, std::string> m) {
  std::lock_guard lock(mu_);
  metrics_ = std::move(m);
}

std::map<std::string, std::string> TeleopGateway::metrics() const {
  std::lock_guard lock(mu_);
  return metrics_;
}

}  // namespace dynarace
