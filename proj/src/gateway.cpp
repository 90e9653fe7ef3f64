#include "dbot/gateway.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstring>

#include <fmt/format.h>

#include "json.hpp"

namespace dbot {
namespace {

double wall_now() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

double mono_now() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

void set_nonblocking(int fd) {
  const int fl = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, fl | O_NONBLOCK);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

constexpr std::size_t kMaxLine = 64 * 1024;

}  // namespace

BindAddress parse_bind_address(const std::string& s) {
  BindAddress a;
  std::string port = s;
  const auto colon = s.rfind(':');
  if (colon != std::string::npos) {
    if (colon > 0) a.host = s.substr(0, colon);
    port = s.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    a.port = std::stoi(port, &used);
    if (used != port.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw GatewayError(fmt::format("bad bind address '{}'", s));
  }
  if (a.port < 0 || a.port > 65535) throw GatewayError(fmt::format("port out of range in '{}'", s));
  if (a.host == "localhost") a.host = "127.0.0.1";
  return a;
}

std::string websocket_accept_key(const std::string& client_key) {
  const std::string src = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(src.data()), src.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(out), static_cast<std::size_t>(n));
}

std::string websocket_text_frame(const std::string& payload) {
  std::string f;
  f.push_back(static_cast<char>(0x81));
  const std::uint64_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(n));
  } else if (n <= 0xFFFF) {
    f.push_back(static_cast<char>(126));
    f.push_back(static_cast<char>(n >> 8));
    f.push_back(static_cast<char>(n & 0xFF));
  } else {
    f.push_back(static_cast<char>(127));
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((n >> (8 * i)) & 0xFF));
  }
  f += payload;
  return f;
}

enum class Proto { Pending, Http, Raw, WebSocket };

struct Gateway::Client {
  int fd = -1;
  std::uint64_t id = 0;
  Proto proto = Proto::Pending;
  double connected_at = 0.0;
  std::string in;
  std::string out;
  std::string ws_message;  // fragmented message being assembled
  bool closing = false;    // flush what is left, then close
  bool dead = false;
};

Gateway::Gateway(GatewayConfig cfg) : cfg_(std::move(cfg)) {}

Gateway::~Gateway() { stop(); }

void Gateway::start() {
  if (running_) return;
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw GatewayError(fmt::format("socket: {}", std::strerror(errno)));
  int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(cfg_.address.port));
  if (inet_pton(AF_INET, cfg_.address.host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw GatewayError(fmt::format("cannot parse host '{}'", cfg_.address.host));
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw GatewayError(fmt::format("cannot bind {}:{}: {}", cfg_.address.host, cfg_.address.port, why));
  }
  socklen_t len = sizeof addr;
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  bound_port_ = ntohs(addr.sin_port);
  set_nonblocking(listen_fd_);
  if (::pipe(wake_pipe_) < 0) throw GatewayError("pipe failed");
  set_nonblocking(wake_pipe_[0]);
  set_nonblocking(wake_pipe_[1]);
  running_ = true;
  thread_ = std::thread([this] { run(); });
}

void Gateway::stop() {
  if (!running_.exchange(false)) return;
  wake();
  if (thread_.joinable()) thread_.join();
  std::lock_guard lk(mu_);
  for (auto& c : clients_) ::close(c->fd);
  clients_.clear();
  ::close(listen_fd_);
  ::close(wake_pipe_[0]);
  ::close(wake_pipe_[1]);
  listen_fd_ = wake_pipe_[0] = wake_pipe_[1] = -1;
}

void Gateway::wake() {
  const char b = 1;
  [[maybe_unused]] auto n = ::write(wake_pipe_[1], &b, 1);
}

std::size_t Gateway::client_count() const {
  std::lock_guard lk(mu_);
  return clients_.size();
}

void Gateway::queue_out(Client& c, const std::string& text) {
  if (c.dead || c.closing) return;
  c.out += (c.proto == Proto::WebSocket) ? websocket_text_frame(text) : text;
  if (c.out.size() > cfg_.max_pending_bytes) {
    c.dead = true;  // slow reader: drop instead of buffering without bound
    ++dropped_clients_;
  }
}

void Gateway::broadcast(const std::string& line) {
  if (!running_) return;
  {
    std::lock_guard lk(mu_);
    last_line_ = line;
    for (auto& c : clients_) {
      if (c->proto == Proto::Raw) queue_out(*c, line);
      // Browser clients receive one message per record without the newline.
      else if (c->proto == Proto::WebSocket)
        queue_out(*c, line.empty() || line.back() != '\n' ? line : line.substr(0, line.size() - 1));
    }
  }
  wake();
}

std::vector<OperatorCommand> Gateway::poll_commands() {
  std::lock_guard lk(mu_);
  std::vector<OperatorCommand> out(commands_.begin(), commands_.end());
  commands_.clear();
  return out;
}

void Gateway::handle_line(Client& c, const std::string& raw) {
  const std::string text = trim(raw);
  if (text.empty()) return;
  const bool ws = c.proto == Proto::WebSocket;
  auto reply = [&](const nlohmann::ordered_json& j) { queue_out(c, ws ? j.dump() : j.dump() + "\n"); };

  // Status echo; handled here so it never touches the simulation.
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.is_object() && j.size() == 1 && j.contains("cmd") && j["cmd"] == "DIAG") {
      nlohmann::ordered_json d;
      d["type"] = "diag";
      d["clients"] = clients_.size();
      d["dropped_clients"] = dropped_clients_.load();
      d["rejected_commands"] = rejected_.load();
      d["queued_commands"] = commands_.size();
      d["last"] = last_line_.empty() ? nlohmann::ordered_json(nullptr)
                                     : nlohmann::ordered_json::parse(last_line_);
      reply(d);
      return;
    }
  } catch (const nlohmann::json::exception&) {
    // fall through; parse_command produces the rejection reason
  }

  try {
    OperatorCommand cmd = parse_command(text);
    cmd.issued_at = wall_now();
    cmd.client_id = c.id;
    if (commands_.size() >= cfg_.command_capacity) {
      ++overflowed_;
      reply({{"type", "reject"}, {"reason", "command queue full"}});
      return;
    }
    commands_.push_back(cmd);
    reply({{"type", "ack"}, {"cmd", to_wire(cmd.kind)}});
  } catch (const CommandRejected& e) {
    ++rejected_;
    reply({{"type", "reject"}, {"reason", e.what()}});
  }
}

void Gateway::handle_http(Client& c) {
  const auto end = c.in.find("\r\n\r\n");
  if (end == std::string::npos) {
    if (c.in.size() > 16384) c.dead = true;
    return;
  }
  const std::string head = c.in.substr(0, end);
  c.in.erase(0, end + 4);

  std::string path, key, upgrade;
  std::size_t pos = 0;
  bool first = true;
  while (pos <= head.size()) {
    auto nl = head.find("\r\n", pos);
    if (nl == std::string::npos) nl = head.size();
    const std::string l = head.substr(pos, nl - pos);
    pos = nl + 2;
    if (first) {
      const auto sp1 = l.find(' ');
      const auto sp2 = l.find(' ', sp1 + 1);
      if (sp1 != std::string::npos && sp2 != std::string::npos) path = l.substr(sp1 + 1, sp2 - sp1 - 1);
      first = false;
      continue;
    }
    const auto colon = l.find(':');
    if (colon == std::string::npos) continue;
    const std::string name = lower(trim(l.substr(0, colon)));
    const std::string value = trim(l.substr(colon + 1));
    if (name == "sec-websocket-key") key = value;
    if (name == "upgrade") upgrade = lower(value);
  }
  if (path != "/ws" || key.empty() || upgrade != "websocket") {
    const std::string body = "websocket endpoint is /ws\n";
    c.out += fmt::format("HTTP/1.1 {}\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                         path == "/ws" ? "400 Bad Request" : "404 Not Found", body.size(), body);
    c.closing = true;
    return;
  }
  c.out += fmt::format(
      "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
      "Sec-WebSocket-Accept: {}\r\n\r\n",
      websocket_accept_key(key));
  c.proto = Proto::WebSocket;
  if (!c.in.empty()) handle_ws(c);
}

void Gateway::handle_ws(Client& c) {
  for (;;) {
    if (c.in.size() < 2) return;
    const auto* b = reinterpret_cast<const unsigned char*>(c.in.data());
    const bool fin = b[0] & 0x80;
    const int op = b[0] & 0x0F;
    const bool masked = b[1] & 0x80;
    std::uint64_t n = b[1] & 0x7F;
    std::size_t off = 2;
    if (n == 126) {
      if (c.in.size() < 4) return;
      n = (std::uint64_t(b[2]) << 8) | b[3];
      off = 4;
    } else if (n == 127) {
      if (c.in.size() < 10) return;
      n = 0;
      for (int i = 0; i < 8; ++i) n = (n << 8) | b[2 + i];
      off = 10;
    }
    if (!masked || n > kMaxLine) {  // clients must mask
      c.dead = true;
      return;
    }
    if (c.in.size() < off + 4 + n) return;
    const unsigned char* mask = b + off;
    std::string payload(n, '\0');
    for (std::uint64_t i = 0; i < n; ++i) payload[i] = static_cast<char>(b[off + 4 + i] ^ mask[i % 4]);
    c.in.erase(0, off + 4 + n);

    switch (op) {
      case 0x0:
      case 0x1:
      case 0x2:
        c.ws_message += payload;
        if (c.ws_message.size() > kMaxLine) {
          c.dead = true;
          return;
        }
        if (fin) {
          handle_line(c, c.ws_message);
          c.ws_message.clear();
        }
        break;
      case 0x8:
        c.out += std::string("\x88\x00", 2);
        c.closing = true;
        return;
      case 0x9: {
        std::string pong;
        pong.push_back(static_cast<char>(0x8A));
        pong.push_back(static_cast<char>(std::min<std::size_t>(payload.size(), 125)));
        pong += payload.substr(0, 125);
        c.out += pong;
        break;
      }
      default:
        break;  // pong and reserved opcodes are ignored
    }
  }
}

void Gateway::handle_readable(Client& c) {
  char buf[4096];
  for (;;) {
    const ssize_t n = ::recv(c.fd, buf, sizeof buf, 0);
    if (n > 0) {
      c.in.append(buf, static_cast<std::size_t>(n));
      continue;
    }
    if (n == 0) c.dead = true;
    else if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) c.dead = true;
    break;
  }
  if (c.proto == Proto::Pending && !c.in.empty())
    c.proto = c.in.rfind("GET ", 0) == 0 || std::string("GET ").rfind(c.in, 0) == 0 ? Proto::Http : Proto::Raw;
  if (c.proto == Proto::Http) handle_http(c);
  else if (c.proto == Proto::WebSocket) handle_ws(c);
  if (c.proto == Proto::Raw) {
    std::size_t nl;
    while ((nl = c.in.find('\n')) != std::string::npos) {
      const std::string line = c.in.substr(0, nl);
      c.in.erase(0, nl + 1);
      handle_line(c, line);
    }
    if (c.in.size() > kMaxLine) c.dead = true;
  }
}

void Gateway::flush(Client& c) {
  while (!c.out.empty()) {
    const ssize_t n = ::send(c.fd, c.out.data(), c.out.size(), MSG_NOSIGNAL);
    if (n > 0) {
      c.out.erase(0, static_cast<std::size_t>(n));
      continue;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
    if (n < 0 && errno == EINTR) continue;
    c.dead = true;
    return;
  }
  if (c.closing) c.dead = true;
}

void Gateway::accept_clients() {
  for (;;) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) return;
    set_nonblocking(fd);
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto c = std::make_unique<Client>();
    c->fd = fd;
    c->id = next_client_id_++;
    c->connected_at = mono_now();
    clients_.push_back(std::move(c));
  }
}

void Gateway::run() {
  std::vector<pollfd> fds;
  while (running_) {
    {
      std::lock_guard lk(mu_);
      fds.clear();
      fds.push_back({listen_fd_, POLLIN, 0});
      fds.push_back({wake_pipe_[0], POLLIN, 0});
      for (auto& c : clients_)
        fds.push_back({c->fd, static_cast<short>(POLLIN | (c->out.empty() ? 0 : POLLOUT)), 0});
    }
    const int rc = ::poll(fds.data(), fds.size(), 50);
    if (rc < 0 && errno != EINTR) break;

    std::lock_guard lk(mu_);
    if (fds[1].revents & POLLIN) {
      char drain[256];
      while (::read(wake_pipe_[0], drain, sizeof drain) > 0) {
      }
    }
    // Client list may only have grown at the tail since the snapshot.
    for (std::size_t i = 2; i < fds.size() && i - 2 < clients_.size(); ++i) {
      Client& c = *clients_[i - 2];
      if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) handle_readable(c);
    }
    const double now = mono_now();
    for (auto& c : clients_) {
      if (c->proto == Proto::Pending && now - c->connected_at > cfg_.handshake_grace) c->proto = Proto::Raw;
      if (!c->dead) flush(*c);
    }
    clients_.erase(std::remove_if(clients_.begin(), clients_.end(),
                                  [](const std::unique_ptr<Client>& c) {
                                    if (c->dead) ::close(c->fd);
                                    return c->dead;
                                  }),
                   clients_.end());
    if (fds[0].revents & POLLIN) accept_clients();
  }
}

}  // namespace dbot
