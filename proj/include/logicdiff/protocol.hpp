#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "logicdiff/backend.hpp"
#include "logicdiff/core.hpp"

// Wire protocol v1: every message is a 4-byte big-endian payload length
// followed by a UTF-8 JSON object. Encoders emit compact JSON with sorted keys,
// so a decoded message re-encodes to the same bytes.
namespace logicdiff::protocol {

inline constexpr int kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4;
inline constexpr std::uint32_t kMaxPayloadBytes = 1u << 30;

std::string encode_frame(std::string_view payload);

// Payload of exactly one frame. Throws FrameError with field "length" for a
// short or oversized prefix and "payload" when the byte count disagrees with it.
std::string decode_frame(std::string_view bytes);

std::uint32_t read_length_prefix(std::span<const std::uint8_t, kHeaderBytes> header);

// A request with no tokens is a handshake; the reply advertises d only.
struct ForwardRequest {
  std::vector<TokenId> tokens;
  std::size_t prompt_len = 0;

  bool is_handshake() const noexcept { return tokens.empty(); }
  bool operator==(const ForwardRequest&) const = default;
};

struct ForwardResponse {
  std::size_t d = 0;
  DenoiserOutput output;
  // Set for hidden_sparse frames: rows that were present on the wire.
  std::optional<std::vector<Position>> sparse_rows;

  bool operator==(const ForwardResponse&) const = default;
};

std::string encode_request(const ForwardRequest& request);
ForwardRequest decode_request(std::string_view payload);

// Dense frame carrying every hidden row.
std::string encode_response(const DenoiserOutput& output, std::size_t d);
// Sparse frame carrying only `rows` (strictly increasing). Omitted rows decode as zeros.
std::string encode_response_sparse(const DenoiserOutput& output, std::size_t d,
                                   std::span<const Position> rows);
std::string encode_response(const ForwardResponse& response);
std::string encode_handshake_response(std::size_t d);
std::string encode_error(std::string_view message);

// `expected_len` checks the per-position arrays against the request. Throws
// FrameError naming the first offending field; kProtocolVersion for "v";
// kRemote for a server error frame.
ForwardResponse decode_response(std::string_view payload,
                                std::optional<std::size_t> expected_len = std::nullopt);

// Printable dump for diagnostics: escaped text, truncated to `limit` bytes.
std::string dump_bytes(std::string_view bytes, std::size_t limit = 512);

}  // namespace logicdiff::protocol
