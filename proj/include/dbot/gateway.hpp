#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dbot/telemetry.hpp"

namespace dbot {

struct GatewayError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

// "host:port", ":port" or "port".
BindAddress parse_bind_address(const std::string& s);

struct GatewayConfig {
  BindAddress address;
  std::size_t command_capacity = 64;
  std::size_t max_pending_bytes = 1 << 20;  // per client; beyond this it is dropped
  double handshake_grace = 0.2;  // s a silent client may wait before it is treated as raw TCP
};

// Line-oriented telemetry/command server. Raw TCP clients exchange
// newline-terminated JSON; browser clients upgrade via GET /ws and exchange
// one JSON object per WebSocket text message.
class Gateway {
 public:
  explicit Gateway(GatewayConfig cfg = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // Binds and starts the I/O thread. Throws GatewayError if the address is unusable.
  void start();
  void stop();
  int port() const { return bound_port_; }

  // Never blocks on clients. `line` must be newline-terminated.
  void broadcast(const std::string& line);

  // Drains commands in arrival order.
  std::vector<OperatorCommand> poll_commands();

  std::size_t client_count() const;
  std::uint64_t dropped_clients() const { return dropped_clients_.load(); }
  std::uint64_t rejected_commands() const { return rejected_.load(); }
  std::uint64_t overflowed_commands() const { return overflowed_.load(); }

 private:
  struct Client;
  void run();
  void accept_clients();
  void handle_readable(Client& c);
  void handle_line(Client& c, const std::string& text);
  void handle_http(Client& c);
  void handle_ws(Client& c);
  void queue_out(Client& c, const std::string& text);
  void flush(Client& c);
  void wake();

  GatewayConfig cfg_;
  int listen_fd_ = -1;
  int wake_pipe_[2] = {-1, -1};
  int bound_port_ = 0;
  std::thread thread_;
  std::atomic<bool> running_{false};

  mutable std::mutex mu_;  // guards clients_, commands_, last_line_
  std::vector<std::unique_ptr<Client>> clients_;
  std::deque<OperatorCommand> commands_;
  std::string last_line_;
  std::uint64_t next_client_id_ = 1;

  std::atomic<std::uint64_t> dropped_clients_{0};
  std::atomic<std::uint64_t> rejected_{0};
  std::atomic<std::uint64_t> overflowed_{0};
};

// Handshake helper, exposed for tests.
std::string websocket_accept_key(const std::string& client_key);

// Server-to-client WebSocket text frame (unmasked).
std::string websocket_text_frame(const std::string& payload);

}  // namespace dbot
