#pragma once

#include <stdexcept>
#include <string>

namespace logicdiff {

enum class ErrorKind {
  kInvalidConfig,
  kInvalidInput,
  kShape,
  kIo,
  kProtocolVersion,
  kMalformedFrame,
  kTransport,
  kRemote,  // the server answered with an error frame
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by the frame codec. `field()` names the missing or invalid JSON field
// (empty when the failure is below the JSON layer, e.g. a short length prefix).
class FrameError : public Error {
 public:
  FrameError(ErrorKind kind, std::string field, const std::string& what)
      : Error(kind, what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Transport failure that survived the retry budget. Generation can be resumed
// from the partial result once the endpoint is reachable again.
class TransportError : public Error {
 public:
  TransportError(int attempts, const std::string& what)
      : Error(ErrorKind::kTransport, what), attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }
  bool resumable() const noexcept { return true; }

 private:
  int attempts_;
};

}  // namespace logicdiff
