#pragma once

// WebSocket host for interactive sessions.
//   GET /healthz            -> {"status","version","schema_version","sessions"}
//   GET /session[?id=..]    -> WebSocket upgrade; with id, resumes a snapshot
//   GET /session?seed=N     -> new session trained with seed N
// Each connection owns one Session and runs on its own strand. Snapshots are
// written to <data_dir>/<id>.json on disconnect, pause and session end.

#include <atomic>
#include <cctype>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include "cftamer/experiment.hpp"
#include "cftamer/session.hpp"

namespace cftamer {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct ServerConfig {
  ExperimentConfig experiment;
  Norms norms;
  int threads = 0;
};

inline SessionConfig session_config_for(const ExperimentConfig& cfg, const Norms& norms, std::uint64_t seed) {
  SessionConfig s;
  s.env = cfg.env;
  s.grid = cfg.grid;
  s.trainer = cell_trainer_config(cfg, cfg.variants.empty() ? Variant::vanilla : cfg.variants.front(), seed);
  s.eval_seeds = cfg.eval_seeds;
  s.norms = norms;
  s.feedback_timeout_ms = cfg.feedback_timeout_ms;
  return s;
}

inline bool valid_session_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
  return true;
}

inline std::string new_session_id() {
  std::random_device rd;
  const std::uint64_t x = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  return hex64(x);
}

// Splits "/path?a=1&b=2". No percent-decoding; ids and seeds never need it.
inline std::pair<std::string, std::map<std::string, std::string>> split_target(std::string_view target) {
  std::map<std::string, std::string> q;
  const auto qpos = target.find('?');
  std::string path(target.substr(0, qpos));
  if (qpos == std::string_view::npos) return {path, q};
  for (std::size_t start = qpos + 1; start < target.size();) {
    std::size_t amp = target.find('&', start);
    if (amp == std::string_view::npos) amp = target.size();
    const std::string part(target.substr(start, amp - start));
    const auto eq = part.find('=');
    if (eq != std::string::npos) q[part.substr(0, eq)] = part.substr(eq + 1);
    start = amp + 1;
  }
  return {path, q};
}

inline std::filesystem::path snapshot_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / (id + ".json");
}

inline void save_session(const Session& s, const std::filesystem::path& dir) {
  ensure_dir(dir);
  const auto path = snapshot_path(dir, s.id());
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, s.snapshot().dump());
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move snapshot into place: " + path.string());
}

inline Session load_session(const std::filesystem::path& dir, const std::string& id) {
  const auto text = read_file(snapshot_path(dir, id));
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SnapshotError(std::string("snapshot is not valid JSON: ") + e.what());
  }
  return Session::restore(j);
}

class SessionServer {
 public:
  explicit SessionServer(ServerConfig cfg) : cfg_(std::move(cfg)) {}
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;
  ~SessionServer() { stop(); }

  // Binds and starts serving. Returns the bound port (useful with port 0).
  unsigned short start(const std::string& address, unsigned short port) {
    ioc_ = std::make_unique<net::io_context>();
    acceptor_ = std::make_unique<tcp::acceptor>(net::make_strand(*ioc_));
    beast::error_code ec;
    const tcp::endpoint ep(net::ip::make_address(address, ec), port);
    if (ec) throw IoError("bad listen address '" + address + "': " + ec.message());
    acceptor_->open(ep.protocol(), ec);
    if (!ec) acceptor_->set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_->bind(ep, ec);
    if (!ec) acceptor_->listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw IoError("cannot listen on " + address + ":" + std::to_string(port) + ": " + ec.message());
    const auto bound = acceptor_->local_endpoint().port();
    do_accept();
    const int n = cfg_.threads > 0 ? cfg_.threads : std::max(2, static_cast<int>(std::thread::hardware_concurrency()));
    for (int i = 0; i < n; ++i) threads_.emplace_back([this] { ioc_->run(); });
    return bound;
  }

  // Stops serving. Open sessions are paused and snapshotted as their
  // connections are torn down.
  void stop() {
    if (!ioc_) return;
    ioc_->stop();
    for (auto& t : threads_) t.join();
    threads_.clear();
    acceptor_.reset();
    ioc_.reset();
  }

  int active_sessions() const { return active_.load(); }

  json health() const {
    return {{"status", "ok"},
            {"version", kVersion},
            {"schema_version", kSchemaVersion},
            {"sessions", active_sessions()}};
  }

  const ServerConfig& config() const { return cfg_; }

 private:
  class WsConnection;
  class HttpConnection;
  friend class WsConnection;
  friend class HttpConnection;

  bool claim(const std::string& id) {
    std::lock_guard lock(ids_mutex_);
    return live_ids_.insert(id).second;
  }
  void release(const std::string& id) {
    std::lock_guard lock(ids_mutex_);
    live_ids_.erase(id);
  }

  void do_accept();

  ServerConfig cfg_;
  std::unique_ptr<net::io_context> ioc_;
  std::unique_ptr<tcp::acceptor> acceptor_;
  std::vector<std::thread> threads_;
  std::atomic<int> active_{0};
  std::mutex ids_mutex_;
  std::set<std::string> live_ids_;
};

class SessionServer::WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(SessionServer& server, tcp::socket&& socket)
      : server_(server), ws_(std::move(socket)), timer_(ws_.get_executor()) {}

  ~WsConnection() {
    if (!session_) return;
    session_->disconnect();
    persist();
    server_.release(session_->id());
    --server_.active_;
  }

  void run(http::request<http::string_body> req) {
    const auto [path, query] = split_target(std::string_view(req.target().data(), req.target().size()));
    (void)path;
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    std::vector<json> first;
    try {
      first = open_session(query);
    } catch (const std::exception& e) {
      json m{{"schema_version", kSchemaVersion}, {"kind", "error"}, {"code", "session_unavailable"}, {"message", e.what()}};
      first = {m};
      session_.reset();
    }
    ws_.async_accept(req, [self = shared_from_this(), first = std::move(first)](beast::error_code ec) mutable {
      if (ec) return;
      self->dispatch(std::move(first));
      if (self->session_)
        self->do_read();
      else
        self->close_after_flush_ = true;
    });
  }

 private:
  std::vector<json> open_session(const std::map<std::string, std::string>& query) {
    const auto& dir = server_.cfg_.experiment.data_dir;
    std::vector<json> out;
    if (auto it = query.find("id"); it != query.end()) {
      if (!valid_session_id(it->second)) throw std::invalid_argument("invalid session id");
      if (!std::filesystem::exists(snapshot_path(dir, it->second)))
        throw std::invalid_argument("no snapshot for session " + it->second);
      if (!server_.claim(it->second)) throw std::invalid_argument("session " + it->second + " is already connected");
      try {
        session_.emplace(load_session(dir, it->second));
      } catch (...) {
        server_.release(it->second);
        throw;
      }
      out = session_->render();
    } else {
      std::uint64_t seed = server_.cfg_.experiment.seeds.empty() ? 0 : server_.cfg_.experiment.seeds.front();
      if (auto it = query.find("seed"); it != query.end()) seed = detail::to_u64("seed", it->second);
      std::string id = new_session_id();
      while (!server_.claim(id)) id = new_session_id();
      try {
        session_.emplace(id, session_config_for(server_.cfg_.experiment, server_.cfg_.norms, seed));
      } catch (...) {
        server_.release(id);
        throw;
      }
      out = session_->start();
    }
    ++server_.active_;
    return out;
  }

  void persist() {
    try {
      save_session(*session_, server_.cfg_.experiment.data_dir);
    } catch (const std::exception&) {
      // The connection is going away either way; nothing to report to.
    }
  }

  void dispatch(std::vector<json> msgs) {
    for (auto& m : msgs) {
      const std::string kind = m.value("kind", "");
      if (kind == "awaiting_feedback") arm_timer(m.at("step").get<int>(), m.at("timeout_ms").get<int>());
      if (kind == "session_end") {
        timer_.cancel();
        persist();
      }
      if (kind == "state_update" && m.value("phase", "") == "paused") {
        timer_.cancel();
        persist();
      }
      outbox_.push_back(m.dump());
    }
    if (!writing_) do_write();
  }

  void arm_timer(int step, int ms) {
    timer_.expires_after(std::chrono::milliseconds(ms));
    timer_.async_wait([self = shared_from_this(), step](beast::error_code ec) {
      if (ec || !self->session_) return;
      self->dispatch(self->session_->timeout(step));
    });
  }

  void do_write() {
    if (outbox_.empty()) {
      writing_ = false;
      if (close_after_flush_)
        ws_.async_close(websocket::close_code::policy_error, [self = shared_from_this()](beast::error_code) {});
      return;
    }
    writing_ = true;
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->outbox_.clear();
        self->writing_ = false;
        self->timer_.cancel();
        return;
      }
      self->outbox_.pop_front();
      self->do_write();
    });
  }

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->timer_.cancel();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      std::vector<json> replies;
      if (!self->ws_.got_text()) {
        replies = {{{"schema_version", kSchemaVersion}, {"kind", "error"}, {"code", "malformed"},
                    {"message", "binary frames are not accepted"}}};
      } else {
        replies = self->session_->handle_text(text);
      }
      const bool waiting = self->session_->pending_step().has_value();
      if (!waiting) self->timer_.cancel();
      self->dispatch(std::move(replies));
      self->do_read();
    });
  }

  SessionServer& server_;
  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  bool writing_ = false;
  bool close_after_flush_ = false;
  std::optional<Session> session_;
};

class SessionServer::HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(SessionServer& server, tcp::socket&& socket) : server_(server), stream_(std::move(socket)) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->on_request();
    });
  }

 private:
  void on_request() {
    const auto [path, query] = split_target(std::string_view(req_.target().data(), req_.target().size()));
    (void)query;
    if (websocket::is_upgrade(req_)) {
      if (path == "/session") {
        stream_.expires_never();
        std::make_shared<WsConnection>(server_, stream_.release_socket())->run(std::move(req_));
        return;
      }
      return respond(http::status::not_found, json{{"error", "no such endpoint"}});
    }
    if (path == "/healthz" && (req_.method() == http::verb::get || req_.method() == http::verb::head))
      return respond(http::status::ok, server_.health());
    if (path == "/session") return respond(http::status::upgrade_required, json{{"error", "WebSocket upgrade required"}});
    respond(http::status::not_found, json{{"error", "no such endpoint"}});
  }

  void respond(http::status status, const json& body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, std::string("cftamer/") + std::string(kVersion));
    res->set(http::field::content_type, "application/json");
    res->keep_alive(false);
    res->body() = body.dump();
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  SessionServer& server_;
  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

inline void SessionServer::do_accept() {
  acceptor_->async_accept(net::make_strand(*ioc_), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) {
      if (ec == net::error::operation_aborted) return;
    } else {
      std::make_shared<HttpConnection>(*this, std::move(socket))->run();
    }
    do_accept();
  });
}

}  // namespace cftamer
