#include "logicdiff/protocol.hpp"

#include <charconv>
#include <cstdio>

#include "json.hpp"

namespace logicdiff::protocol {
namespace {

using nlohmann::json;

[[noreturn]] void malformed(const std::string& field, const std::string& what) {
  throw FrameError(ErrorKind::kMalformedFrame, field, field + ": " + what);
}

json parse_payload(std::string_view payload) {
  json j = json::parse(payload, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) malformed("payload", "not valid JSON");
  if (!j.is_object()) malformed("payload", "not a JSON object");
  return j;
}

const json& require(const json& j, const char* field) {
  const auto it = j.find(field);
  if (it == j.end()) malformed(field, "missing");
  return *it;
}

void check_version(const json& j) {
  const json& v = require(j, "v");
  if (!v.is_number_integer()) malformed("v", "not an integer");
  if (v.get<std::int64_t>() != kVersion) {
    throw FrameError(ErrorKind::kProtocolVersion, "v",
                     "v: peer speaks version " + v.dump() + ", expected " +
                         std::to_string(kVersion));
  }
}

std::int64_t as_int(const json& v, const char* field) {
  if (!v.is_number_integer()) malformed(field, "expected an integer, got " + v.dump());
  return v.get<std::int64_t>();
}

void read_row(const json& v, std::size_t d, std::span<float> out) {
  if (!v.is_array() || v.size() != d) malformed("hidden", "row does not have d entries");
  for (std::size_t k = 0; k < d; ++k) {
    if (!v[k].is_number()) malformed("hidden", "non-numeric entry");
    out[k] = static_cast<float>(v[k].get<double>());
  }
}

json row_json(std::span<const float> row) {
  json r = json::array();
  for (float x : row) r.push_back(static_cast<double>(x));
  return r;
}

json response_head(const DenoiserOutput& output, std::size_t d) {
  json j;
  j["v"] = kVersion;
  j["d"] = d;
  j["top_token"] = output.top_token;
  j["top_prob"] = output.top_prob;
  return j;
}

// Shortest round-trip digits laid out like Python's float repr: positional
// for decimal exponents in [-4, 16), scientific otherwise, integral values
// keep a trailing ".0". nlohmann's printer can pick a different 17-digit tie,
// which would break byte equality with frames written by Python peers.
void append_double(std::string& out, double x) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::scientific);
  (void)ec;
  std::string_view sci(buf, static_cast<std::size_t>(end - buf));
  const auto e_at = sci.find('e');
  const int exp = std::stoi(std::string(sci.substr(e_at + 1)));
  std::string_view mant = sci.substr(0, e_at);
  const bool neg = mant.front() == '-';
  if (neg) mant.remove_prefix(1);
  std::string digits;
  for (char c : mant) {
    if (c != '.') digits.push_back(c);
  }
  if (neg) out.push_back('-');
  if (exp < -4 || exp >= 16) {
    out.push_back(digits[0]);
    if (digits.size() > 1) {
      out.push_back('.');
      out.append(digits, 1);
    }
    out.push_back('e');
    out.push_back(exp < 0 ? '-' : '+');
    const int a = exp < 0 ? -exp : exp;
    if (a < 10) out.push_back('0');
    out.append(std::to_string(a));
  } else if (exp < 0) {
    out.append("0.");
    out.append(static_cast<std::size_t>(-exp - 1), '0');
    out.append(digits);
  } else {
    const auto int_len = static_cast<std::size_t>(exp) + 1;
    if (digits.size() <= int_len) {
      out.append(digits);
      out.append(int_len - digits.size(), '0');
      out.append(".0");
    } else {
      out.append(digits, 0, int_len);
      out.push_back('.');
      out.append(digits, int_len);
    }
  }
}

// Compact, key-sorted output (object keys are already ordered).
void serialize(const json& j, std::string& out) {
  switch (j.type()) {
    case json::value_t::object: {
      out.push_back('{');
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out.push_back(',');
        first = false;
        out.append(json(k).dump());
        out.push_back(':');
        serialize(v, out);
      }
      out.push_back('}');
      break;
    }
    case json::value_t::array: {
      out.push_back('[');
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out.push_back(',');
        serialize(j[i], out);
      }
      out.push_back(']');
      break;
    }
    case json::value_t::number_float: append_double(out, j.get<double>()); break;
    default: out.append(j.dump()); break;
  }
}

std::string serialize(const json& j) {
  std::string out;
  serialize(j, out);
  return out;
}

}  // namespace

std::string encode_frame(std::string_view payload) {
  if (payload.size() > kMaxPayloadBytes) {
    throw FrameError(ErrorKind::kMalformedFrame, "length", "length: payload exceeds frame limit");
  }
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(kHeaderBytes + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(payload);
  return out;
}

std::uint32_t read_length_prefix(std::span<const std::uint8_t, kHeaderBytes> h) {
  const std::uint32_t n = (std::uint32_t{h[0]} << 24) | (std::uint32_t{h[1]} << 16) |
                          (std::uint32_t{h[2]} << 8) | std::uint32_t{h[3]};
  if (n > kMaxPayloadBytes) malformed("length", "declared payload exceeds frame limit");
  return n;
}

std::string decode_frame(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes) malformed("length", "frame shorter than the length prefix");
  std::array<std::uint8_t, kHeaderBytes> header{};
  for (std::size_t i = 0; i < kHeaderBytes; ++i) header[i] = static_cast<std::uint8_t>(bytes[i]);
  const std::uint32_t n = read_length_prefix(header);
  const std::size_t have = bytes.size() - kHeaderBytes;
  if (have != n) {
    malformed("payload", "length prefix declares " + std::to_string(n) + " bytes, frame has " +
                             std::to_string(have));
  }
  return std::string(bytes.substr(kHeaderBytes));
}

std::string encode_request(const ForwardRequest& request) {
  json j;
  j["v"] = kVersion;
  j["tokens"] = request.tokens;
  j["prompt_len"] = request.prompt_len;
  return serialize(j);
}

ForwardRequest decode_request(std::string_view payload) {
  const json j = parse_payload(payload);
  check_version(j);
  ForwardRequest req;
  const json& tokens = require(j, "tokens");
  if (!tokens.is_array()) malformed("tokens", "not an array");
  for (const auto& t : tokens) {
    const auto id = as_int(t, "tokens");
    if (id < 0 || id > INT32_MAX) malformed("tokens", "token id out of range");
    req.tokens.push_back(static_cast<TokenId>(id));
  }
  const auto pl = as_int(require(j, "prompt_len"), "prompt_len");
  if (pl < 0 || static_cast<std::size_t>(pl) > req.tokens.size()) {
    malformed("prompt_len", "outside [0, len(tokens)]");
  }
  req.prompt_len = static_cast<std::size_t>(pl);
  return req;
}

std::string encode_response(const DenoiserOutput& output, std::size_t d) {
  if (output.hidden.rows != output.size() || (output.hidden.rows > 0 && output.hidden.cols != d)) {
    throw Error(ErrorKind::kShape, "hidden matrix does not match the advertised d");
  }
  json j = response_head(output, d);
  json hidden = json::array();
  for (std::size_t i = 0; i < output.hidden.rows; ++i) hidden.push_back(row_json(output.hidden.row(i)));
  j["hidden"] = std::move(hidden);
  return serialize(j);
}

std::string encode_response_sparse(const DenoiserOutput& output, std::size_t d,
                                   std::span<const Position> rows) {
  if (output.hidden.rows != output.size() || (output.hidden.rows > 0 && output.hidden.cols != d)) {
    throw Error(ErrorKind::kShape, "hidden matrix does not match the advertised d");
  }
  json j = response_head(output, d);
  json sparse = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= output.hidden.rows || (i > 0 && rows[i] <= rows[i - 1])) {
      throw Error(ErrorKind::kInvalidInput, "sparse rows must be increasing and in range");
    }
    sparse.push_back(json::array({rows[i], row_json(output.hidden.row(rows[i]))}));
  }
  j["hidden_sparse"] = std::move(sparse);
  return serialize(j);
}

std::string encode_response(const ForwardResponse& response) {
  if (response.sparse_rows) {
    return encode_response_sparse(response.output, response.d, *response.sparse_rows);
  }
  return encode_response(response.output, response.d);
}

std::string encode_handshake_response(std::size_t d) {
  json j;
  j["v"] = kVersion;
  j["d"] = d;
  j["top_token"] = json::array();
  j["top_prob"] = json::array();
  j["hidden"] = json::array();
  return serialize(j);
}

std::string encode_error(std::string_view message) {
  json j;
  j["v"] = kVersion;
  j["error"] = message;
  return serialize(j);
}

ForwardResponse decode_response(std::string_view payload, std::optional<std::size_t> expected_len) {
  const json j = parse_payload(payload);
  check_version(j);
  if (const auto it = j.find("error"); it != j.end()) {
    throw FrameError(ErrorKind::kRemote, "error",
                     "server reported: " + (it->is_string() ? it->get<std::string>() : it->dump()));
  }
  ForwardResponse resp;
  const auto d = as_int(require(j, "d"), "d");
  if (d <= 0) malformed("d", "must be positive");
  resp.d = static_cast<std::size_t>(d);

  const json& tokens = require(j, "top_token");
  if (!tokens.is_array()) malformed("top_token", "not an array");
  const std::size_t n = tokens.size();
  if (expected_len && n != *expected_len) {
    malformed("top_token", "has " + std::to_string(n) + " entries for " +
                               std::to_string(*expected_len) + " positions");
  }
  DenoiserOutput& out = resp.output;
  for (const auto& t : tokens) {
    const auto id = as_int(t, "top_token");
    if (id < 0 || id > INT32_MAX) malformed("top_token", "token id out of range");
    out.top_token.push_back(static_cast<TokenId>(id));
  }

  const json& probs = require(j, "top_prob");
  if (!probs.is_array() || probs.size() != n) malformed("top_prob", "length differs from top_token");
  for (const auto& p : probs) {
    if (!p.is_number()) malformed("top_prob", "non-numeric entry");
    const double v = p.get<double>();
    if (!(v > 0.0 && v <= 1.0)) malformed("top_prob", "probability outside (0, 1]");
    out.top_prob.push_back(v);
  }

  out.hidden = HiddenMatrix(n, resp.d);
  if (const auto it = j.find("hidden"); it != j.end()) {
    if (!it->is_array() || it->size() != n) malformed("hidden", "row count differs from top_token");
    for (std::size_t i = 0; i < n; ++i) read_row((*it)[i], resp.d, out.hidden.row(i));
  } else if (const auto sp = j.find("hidden_sparse"); sp != j.end()) {
    if (!sp->is_array()) malformed("hidden_sparse", "not an array");
    std::vector<Position> rows;
    for (const auto& entry : *sp) {
      if (!entry.is_array() || entry.size() != 2) malformed("hidden_sparse", "entry is not [pos, row]");
      const auto pos = as_int(entry[0], "hidden_sparse");
      if (pos < 0 || static_cast<std::size_t>(pos) >= n ||
          (!rows.empty() && static_cast<std::size_t>(pos) <= rows.back())) {
        malformed("hidden_sparse", "position out of range or out of order");
      }
      rows.push_back(static_cast<Position>(pos));
      read_row(entry[1], resp.d, out.hidden.row(rows.back()));
    }
    resp.sparse_rows = std::move(rows);
  } else {
    malformed("hidden", "missing (neither hidden nor hidden_sparse present)");
  }
  return resp;
}

std::string dump_bytes(std::string_view bytes, std::size_t limit) {
  std::string out;
  const std::size_t n = std::min(bytes.size(), limit);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    if (c >= 0x20 && c < 0x7f && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    }
  }
  if (bytes.size() > limit) out += "... (" + std::to_string(bytes.size()) + " bytes)";
  return out;
}

}  // namespace logicdiff::protocol
