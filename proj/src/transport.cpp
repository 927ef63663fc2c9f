#include "sfl/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

namespace sfl {

void Transport::send(std::span<const std::uint8_t> frame) {
  do_send(frame);
  bytes_sent_ += frame.size();
}

std::vector<std::uint8_t> Transport::receive() {
  auto frame = do_receive();
  bytes_received_ += frame.size();
  return frame;
}

// ---------------------------------------------------------------------------
// In-process channel

namespace {

struct Queue {
  std::mutex mutex;
  std::condition_variable ready;
  std::deque<std::vector<std::uint8_t>> frames;
  bool writer_closed = false;
};

class ChannelEnd final : public Transport {
 public:
  ChannelEnd(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out)
      : in_(std::move(in)), out_(std::move(out)) {}

  ~ChannelEnd() override {
    std::lock_guard lock(out_->mutex);
    out_->writer_closed = true;
    out_->ready.notify_all();
  }

 protected:
  void do_send(std::span<const std::uint8_t> frame) override {
    std::lock_guard lock(out_->mutex);
    out_->frames.emplace_back(frame.begin(), frame.end());
    out_->ready.notify_one();
  }

  std::vector<std::uint8_t> do_receive() override {
    std::unique_lock lock(in_->mutex);
    in_->ready.wait(lock, [&] { return !in_->frames.empty() || in_->writer_closed; });
    if (in_->frames.empty()) throw TransportClosed("in-process peer closed");
    auto frame = std::move(in_->frames.front());
    in_->frames.pop_front();
    return frame;
  }

 private:
  std::shared_ptr<Queue> in_, out_;
};

// ---------------------------------------------------------------------------
// TCP

std::string errno_text(const std::string& what) {
  return what + ": " + std::strerror(errno);
}

class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpTransport() override { ::close(fd_); }
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

 protected:
  void do_send(std::span<const std::uint8_t> frame) override {
    std::size_t done = 0;
    while (done < frame.size()) {
      ssize_t n = ::send(fd_, frame.data() + done, frame.size() - done, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (errno == EPIPE || errno == ECONNRESET)
          throw TransportClosed("peer closed the connection");
        throw TransportError(errno_text("send"));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  std::vector<std::uint8_t> do_receive() override {
    std::vector<std::uint8_t> frame(wire::kHeaderSize);
    read_exact(frame.data(), frame.size(), true);
    const std::size_t total = wire::frame_length(frame);
    frame.resize(total);
    read_exact(frame.data() + wire::kHeaderSize, total - wire::kHeaderSize, false);
    return frame;
  }

 private:
  void read_exact(std::uint8_t* dst, std::size_t n, bool at_boundary) {
    std::size_t done = 0;
    while (done < n) {
      ssize_t got = ::recv(fd_, dst + done, n - done, 0);
      if (got < 0) {
        if (errno == EINTR) continue;
        if (errno == ECONNRESET) throw TransportClosed("connection reset by peer");
        throw TransportError(errno_text("recv"));
      }
      if (got == 0) {
        if (at_boundary && done == 0) throw TransportClosed("peer closed the connection");
        throw wire::ProtocolError(wire::ProtocolError::Kind::Truncated,
                                  "connection closed mid-frame");
      }
      done += static_cast<std::size_t>(got);
    }
  }

  int fd_;
};

}  // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>>
make_in_process_pair() {
  auto a_to_b = std::make_shared<Queue>();
  auto b_to_a = std::make_shared<Queue>();
  return {std::make_unique<ChannelEnd>(b_to_a, a_to_b),
          std::make_unique<ChannelEnd>(a_to_b, b_to_a)};
}

TcpListener::TcpListener(const std::string& address, std::uint16_t port,
                         int backlog) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1)
    throw TransportError("invalid IPv4 bind address '" + address + "'");
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError(errno_text("socket"));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    auto msg = errno == EADDRINUSE
                   ? "port " + std::to_string(port) + " on " + address +
                         " is already in use (pick another with --port)"
                   : errno_text("bind " + address + ":" + std::to_string(port));
    ::close(fd_);
    throw TransportError(msg);
  }
  if (::listen(fd_, backlog) < 0) {
    auto msg = errno_text("listen");
    ::close(fd_);
    throw TransportError(msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Transport> TcpListener::accept() {
  for (;;) {
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_unique<TcpTransport>(fd);
    if (errno != EINTR) throw TransportError(errno_text("accept"));
  }
}

std::unique_ptr<Transport> connect_tcp(const std::string& host,
                                       std::uint16_t port,
                                       std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw TransportError("cannot resolve '" + host + "': " + ::gai_strerror(rc));
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) throw TransportError(errno_text("socket"));
    if (::connect(fd, res->ai_addr, res->ai_addrlen) == 0)
      return std::make_unique<TcpTransport>(fd);
    const int err = errno;
    ::close(fd);
    if ((err != ECONNREFUSED && err != EINTR) ||
        std::chrono::steady_clock::now() >= deadline) {
      errno = err;
      throw TransportError(errno_text("connect to " + host + ":" + service));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

}  // namespace sfl
