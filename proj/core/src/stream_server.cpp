#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <string>
#include <system_error>
#include <thread>
#include <vector>

#include "somnoflow/stream.hpp"

namespace somnoflow::stream {

namespace {

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const { return fd_; }

 private:
  int fd_;
};

bool send_all(int fd, const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const auto n = ::send(fd, s.data() + off, s.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

bool send_emissions(int fd, const std::vector<Emission>& es) {
  std::string buf;
  for (const auto& e : es) buf += e.to_line() + '\n';
  return buf.empty() || send_all(fd, buf);
}

void handle_connection(Fd conn, const net::SleepNet& model, const events::EventRuleConfig& cfg) {
  StreamState state(model, cfg);
  std::string pending;
  char buf[4096];
  for (;;) {
    const auto n = ::recv(conn.get(), buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    pending.append(buf, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (auto nl = pending.find('\n', start); nl != std::string::npos; nl = pending.find('\n', start)) {
      if (!send_emissions(conn.get(), state.feed(std::string_view(pending).substr(start, nl - start)))) return;
      start = nl + 1;
    }
    pending.erase(0, start);
  }
  std::vector<Emission> tail;
  if (!pending.empty()) tail = state.feed(pending);
  state.finalize(&tail);
  send_emissions(conn.get(), tail);
}

}  // namespace

void serve_tcp(const net::SleepNet& model, const events::EventRuleConfig& cfg, const TcpOptions& options) {
  cfg.validate();
  Fd listener(::socket(AF_INET, SOCK_STREAM, 0));
  if (listener.get() < 0) throw std::system_error(errno, std::generic_category(), "socket");
  int yes = 1;
  ::setsockopt(listener.get(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(options.port);
  if (::bind(listener.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    throw std::system_error(errno, std::generic_category(), "bind port " + std::to_string(options.port));
  }
  if (::listen(listener.get(), 16) < 0) throw std::system_error(errno, std::generic_category(), "listen");
  socklen_t len = sizeof addr;
  ::getsockname(listener.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  if (options.on_listening) options.on_listening(ntohs(addr.sin_port));

  std::vector<std::thread> workers;
  std::size_t accepted = 0;
  while (options.max_connections == 0 || accepted < options.max_connections) {
    const int c = ::accept(listener.get(), nullptr, nullptr);
    if (c < 0) {
      if (errno == EINTR) continue;
      break;
    }
    ++accepted;
    workers.emplace_back([&model, &cfg, fd = Fd(c)]() mutable {
      try {
        handle_connection(std::move(fd), model, cfg);
      } catch (const std::exception& e) {
        warn(std::string("stream connection failed: ") + e.what());
      }
    });
  }
  for (auto& t : workers) t.join();
}

}  // namespace somnoflow::stream
