#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sfl/protocol.hpp"

namespace sfl {

/// The peer went away (closed socket, destroyed channel end).
class TransportClosed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Network failures other than an orderly close (connect, bind, I/O).
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered, whole-frame message pipe to one peer. Counts the bytes it moves.
class Transport {
 public:
  virtual ~Transport() = default;

  void send(std::span<const std::uint8_t> frame);
  std::vector<std::uint8_t> receive();

  void send_message(const wire::Message& msg) { send(wire::encode(msg)); }
  wire::Message receive_message() { return wire::decode(receive()); }

  std::uint64_t bytes_sent() const { return bytes_sent_; }
  std::uint64_t bytes_received() const { return bytes_received_; }

 protected:
  virtual void do_send(std::span<const std::uint8_t> frame) = 0;
  virtual std::vector<std::uint8_t> do_receive() = 0;

 private:
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
};

/// Two connected endpoints backed by in-memory queues. Safe to use from two
/// threads; receive() blocks until a frame arrives or the peer is destroyed.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>>
make_in_process_pair();

class TcpListener {
 public:
  /// Binds and listens; port 0 picks an ephemeral port.
  TcpListener(const std::string& address, std::uint16_t port, int backlog = 16);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  std::unique_ptr<Transport> accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connects to host:port, retrying refused connections until `timeout`.
std::unique_ptr<Transport> connect_tcp(
    const std::string& host, std::uint16_t port,
    std::chrono::milliseconds timeout = std::chrono::seconds(10));

}  // namespace sfl
