#include "logicdiff/remote.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <map>

#include <spdlog/spdlog.h>

namespace logicdiff {
namespace {

// Internal: a recoverable socket failure. Never escapes this file.
struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

void write_all(int fd, std::string_view bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw IoFailure(errno_text("send"));
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

// False on a clean EOF before the first byte; throws on EOF mid-read.
bool read_exact(int fd, char* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r < 0) throw IoFailure(errno_text("recv"));
    if (r == 0) {
      if (got == 0) return false;
      throw IoFailure("connection closed mid-frame");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

// Reads one frame payload, or nullopt on a clean EOF at a frame boundary.
std::optional<std::string> read_frame(int fd) {
  std::array<std::uint8_t, protocol::kHeaderBytes> header{};
  if (!read_exact(fd, reinterpret_cast<char*>(header.data()), header.size())) return std::nullopt;
  const std::uint32_t n = protocol::read_length_prefix(header);
  std::string payload(n, '\0');
  if (n > 0 && !read_exact(fd, payload.data(), n)) throw IoFailure("connection closed mid-frame");
  return payload;
}

void set_timeouts(int fd, std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size()) {
    throw Error(ErrorKind::kInvalidConfig, "endpoint must be host:port, got '" + std::string(text) + "'");
  }
  const std::string port_text(text.substr(colon + 1));
  char* end = nullptr;
  const long port = std::strtol(port_text.c_str(), &end, 10);
  if (*end != '\0' || port <= 0 || port > 65535) {
    throw Error(ErrorKind::kInvalidConfig, "invalid port '" + port_text + "'");
  }
  return {std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

RemoteBackend::RemoteBackend(Endpoint endpoint, RetryPolicy retry)
    : endpoint_(std::move(endpoint)), retry_(retry) {
  if (retry_.max_retries < 0) throw Error(ErrorKind::kInvalidConfig, "max_retries must be >= 0");
}

RemoteBackend::~RemoteBackend() { disconnect(); }

void RemoteBackend::disconnect() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void RemoteBackend::connect_once() {
  ++connects_;
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(endpoint_.port);
  if (int rc = ::getaddrinfo(endpoint_.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw IoFailure(std::string("resolve ") + endpoint_.host + ": " + ::gai_strerror(rc));
  }
  std::string last = "no address";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last = errno_text("socket");
      continue;
    }
    set_timeouts(fd, retry_.io_timeout);
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      fd_ = fd;
      ::freeaddrinfo(res);
      return;
    }
    last = errno_text("connect");
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw IoFailure(last);
}

std::string RemoteBackend::exchange(const std::string& request_payload) {
  const std::string frame = protocol::encode_frame(request_payload);
  spdlog::debug("remote {} request: {}", endpoint_.to_string(), protocol::dump_bytes(request_payload, 256));
  auto backoff = std::chrono::duration<double, std::milli>(retry_.initial_backoff);
  std::string last_failure;
  const int attempts = retry_.max_retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      if (fd_ < 0) connect_once();
      write_all(fd_, frame);
      std::optional<std::string> reply = read_frame(fd_);
      if (!reply) throw IoFailure("connection closed before reply");
      spdlog::debug("remote {} response: {}", endpoint_.to_string(), protocol::dump_bytes(*reply, 256));
      return std::move(*reply);
    } catch (const IoFailure& e) {
      disconnect();
      last_failure = e.what();
      spdlog::debug("remote {} attempt {}/{} failed: {}", endpoint_.to_string(), attempt, attempts,
                    last_failure);
      if (attempt < attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= retry_.backoff_multiplier;
      }
    } catch (const FrameError&) {
      disconnect();
      throw;
    }
  }
  throw TransportError(attempts, endpoint_.to_string() + " unreachable after " +
                                     std::to_string(attempts) + " attempts: " + last_failure);
}

namespace {

protocol::ForwardResponse decode_or_dump(const std::string& payload,
                                         std::optional<std::size_t> expected_len) {
  try {
    return protocol::decode_response(payload, expected_len);
  } catch (const FrameError& e) {
    throw FrameError(e.kind(), e.field(),
                     std::string(e.what()) + "\nframe: " + protocol::dump_bytes(payload));
  }
}

}  // namespace

std::size_t RemoteBackend::hidden_dim() {
  if (!dim_) {
    const std::string reply = exchange(protocol::encode_request({}));
    dim_ = decode_or_dump(reply, 0).d;
  }
  return *dim_;
}

DenoiserOutput RemoteBackend::forward(const SequenceState& state) {
  const std::size_t d = hidden_dim();
  protocol::ForwardRequest req;
  req.tokens.assign(state.ids().begin(), state.ids().end());
  req.prompt_len = state.prompt_len();
  const std::string reply = exchange(protocol::encode_request(req));
  protocol::ForwardResponse resp = decode_or_dump(reply, state.size());
  if (resp.d != d) {
    throw FrameError(ErrorKind::kMalformedFrame, "d",
                     "d: response advertises " + std::to_string(resp.d) + " after handshake " +
                         std::to_string(d) + "\nframe: " + protocol::dump_bytes(reply));
  }
  return std::move(resp.output);
}

FrameServer::FrameServer(Handler handler, std::string host, std::uint16_t port)
    : handler_(std::move(handler)), host_(std::move(host)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorKind::kIo, errno_text("socket"));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error(ErrorKind::kInvalidConfig, "server host must be an IPv4 address: " + host_);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    const std::string msg = errno_text("bind/listen");
    ::close(listen_fd_);
    throw Error(ErrorKind::kIo, msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

FrameServer::~FrameServer() { stop(); }

void FrameServer::stop() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
  ::close(listen_fd_);
}

void FrameServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    ++connections_;
    std::lock_guard lock(mu_);
    open_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void FrameServer::serve_connection(int fd) {
  try {
    while (!stopping_) {
      std::optional<std::string> request = read_frame(fd);
      if (!request) break;
      std::optional<std::string> reply = handler_(*request);
      if (!reply) break;
      write_all(fd, protocol::encode_frame(*reply));
    }
  } catch (const std::exception& e) {
    spdlog::debug("frame server connection closed: {}", e.what());
  }
  std::lock_guard lock(mu_);
  std::erase(open_fds_, fd);
  ::close(fd);
}

FrameServer::Handler synthetic_handler(std::vector<Problem> problems, const Vocab& vocab,
                                       TrapConfig trap, bool sparse) {
  trap.validate();
  struct State {
    std::vector<SyntheticBackend> backends;
    std::map<std::vector<TokenId>, std::size_t> by_prompt;
  };
  auto st = std::make_shared<State>();
  st->backends.reserve(problems.size());
  for (const auto& p : problems) {
    st->backends.emplace_back(p, vocab, trap);
    const auto q = st->backends.back().prompt();
    st->by_prompt.emplace(std::vector<TokenId>(q.begin(), q.end()), st->backends.size() - 1);
  }
  const std::size_t d = trap.hidden_dim;
  return [st, d, sparse, &vocab](std::string_view payload) -> std::optional<std::string> {
    protocol::ForwardRequest req;
    try {
      req = protocol::decode_request(payload);
    } catch (const FrameError& e) {
      return protocol::encode_error(e.what());
    }
    if (req.is_handshake()) return protocol::encode_handshake_response(d);
    for (TokenId t : req.tokens) {
      if (!vocab.valid(t)) return protocol::encode_error("token id " + std::to_string(t) + " out of range");
    }
    const std::vector<TokenId> prompt(req.tokens.begin(),
                                      req.tokens.begin() + static_cast<std::ptrdiff_t>(req.prompt_len));
    const auto it = st->by_prompt.find(prompt);
    if (it == st->by_prompt.end()) return protocol::encode_error("prompt matches no served problem");
    try {
      const SequenceState state = SequenceState::from_ids(req.tokens, req.prompt_len, vocab.mask_id());
      const DenoiserOutput out = st->backends[it->second].predict(state);
      if (sparse) return protocol::encode_response_sparse(out, d, masked_positions(state));
      return protocol::encode_response(out, d);
    } catch (const Error& e) {
      return protocol::encode_error(e.what());
    }
  };
}

}  // namespace logicdiff
