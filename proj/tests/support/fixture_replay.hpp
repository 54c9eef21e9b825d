#pragma once

// Replays the recorded wire fixtures listed in manifest.json.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "logicdiff/protocol.hpp"

namespace fixtures {

struct Outcome {
  std::string file;
  bool ok = false;
  std::string detail;
};

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline const char* kind_tag(logicdiff::ErrorKind k) {
  switch (k) {
    case logicdiff::ErrorKind::kMalformedFrame: return "malformed";
    case logicdiff::ErrorKind::kProtocolVersion: return "version";
    case logicdiff::ErrorKind::kRemote: return "remote";
    default: return "other";
  }
}

// Valid frames must re-encode to identical bytes; error fixtures must raise
// the recorded kind naming the recorded field.
inline Outcome replay_one(const std::string& dir, const nlohmann::json& entry) {
  namespace proto = logicdiff::protocol;
  Outcome o;
  o.file = entry.at("file").get<std::string>();
  const std::string bytes = read_bytes(dir + "/" + o.file);
  const bool is_request = entry.at("kind") == "request";
  const auto& err = entry.at("error");
  try {
    const std::string payload = proto::decode_frame(bytes);
    std::string again;
    if (is_request) {
      again = proto::encode_request(proto::decode_request(payload));
    } else {
      again = proto::encode_response(proto::decode_response(payload));
    }
    if (!err.is_null()) {
      o.detail = "expected error on field " + err.at("field").get<std::string>();
      return o;
    }
    o.ok = proto::encode_frame(again) == bytes;
    if (!o.ok) o.detail = "re-encoded bytes differ";
  } catch (const logicdiff::FrameError& e) {
    if (err.is_null()) {
      o.detail = std::string("unexpected error: ") + e.what();
      return o;
    }
    const std::string want_kind = err.at("kind"), want_field = err.at("field");
    o.ok = want_kind == kind_tag(e.kind()) && want_field == e.field();
    if (!o.ok) {
      o.detail = "got " + std::string(kind_tag(e.kind())) + "/" + e.field() + ", want " + want_kind +
                 "/" + want_field;
    }
  }
  return o;
}

inline std::vector<Outcome> replay_all(const std::string& dir) {
  const auto manifest = nlohmann::json::parse(read_bytes(dir + "/manifest.json"));
  std::vector<Outcome> out;
  for (const auto& entry : manifest) out.push_back(replay_one(dir, entry));
  return out;
}

}  // namespace fixtures
