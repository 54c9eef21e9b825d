#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "logicdiff/backend.hpp"
#include "logicdiff/protocol.hpp"

namespace logicdiff {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  // "host:port"; throws kInvalidConfig.
  static Endpoint parse(std::string_view text);
  std::string to_string() const;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{50};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds io_timeout{30000};
};

// Denoiser served over the v1 wire protocol. One request is in flight per
// instance; use one instance per concurrent generation loop.
//
// Transport failures (refused connection, reset, timeout, EOF) are retried
// with exponential backoff on a fresh connection and surface as TransportError
// once the budget is spent. Protocol failures are never retried: they raise
// FrameError with a dump of the offending frame.
class RemoteBackend final : public Denoiser {
 public:
  explicit RemoteBackend(Endpoint endpoint, RetryPolicy retry = {});
  ~RemoteBackend() override;
  RemoteBackend(const RemoteBackend&) = delete;
  RemoteBackend& operator=(const RemoteBackend&) = delete;

  // Handshakes on first use.
  std::size_t hidden_dim() override;
  DenoiserOutput forward(const SequenceState& state) override;

  const Endpoint& endpoint() const noexcept { return endpoint_; }
  // Total connection attempts, for tests of the retry budget.
  int connects() const noexcept { return connects_; }

 private:
  std::string exchange(const std::string& request_payload);
  void connect_once();
  void disconnect() noexcept;

  Endpoint endpoint_;
  RetryPolicy retry_;
  int fd_ = -1;
  int connects_ = 0;
  std::optional<std::size_t> dim_;
};

// Minimal threaded frame server. The handler maps a request payload to a
// response payload; returning nullopt drops the connection without replying.
class FrameServer {
 public:
  using Handler = std::function<std::optional<std::string>(std::string_view request)>;

  // Port 0 binds an ephemeral port.
  explicit FrameServer(Handler handler, std::string host = "127.0.0.1", std::uint16_t port = 0);
  ~FrameServer();
  FrameServer(const FrameServer&) = delete;
  FrameServer& operator=(const FrameServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  Endpoint endpoint() const { return {host_, port_}; }
  std::size_t connections() const noexcept { return connections_.load(); }
  void stop();

 private:
  void accept_loop();
  void serve_connection(int fd);

  Handler handler_;
  std::string host_;
  std::uint16_t port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> connections_{0};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> open_fds_;
};

// Handler answering for a fixed set of corpus problems through the synthetic
// oracle. The prompt selects the problem; unknown prompts or out-of-range ids
// get an error frame. With `sparse`, only masked rows are sent.
FrameServer::Handler synthetic_handler(std::vector<Problem> problems, const Vocab& vocab,
                                       TrapConfig trap = {}, bool sparse = false);

}  // namespace logicdiff
