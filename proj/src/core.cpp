#include "logicdiff/core.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace logicdiff {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidConfig: return "invalid config";
    case ErrorKind::kInvalidInput: return "invalid input";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kProtocolVersion: return "protocol version mismatch";
    case ErrorKind::kMalformedFrame: return "malformed frame";
    case ErrorKind::kTransport: return "transport error";
    case ErrorKind::kRemote: return "remote error";
  }
  return "error";
}

Role role_from_id(int id) {
  if (id < 0 || id >= static_cast<int>(kNumRoles)) {
    throw Error(ErrorKind::kInvalidInput, "role id out of range: " + std::to_string(id));
  }
  return static_cast<Role>(id);
}

const char* role_name(Role r) noexcept {
  switch (r) {
    case Role::kPremise: return "PREMISE";
    case Role::kConnective: return "CONNECTIVE";
    case Role::kDerived: return "DERIVED";
    case Role::kConclusion: return "CONCLUSION";
    case Role::kFiller: return "FILLER";
  }
  return "?";
}

std::optional<Role> role_from_name(std::string_view name) {
  for (Role r : kAllRoles) {
    if (name == role_name(r)) return r;
  }
  return std::nullopt;
}

bool is_numeric_literal(std::string_view token) noexcept {
  if (token.empty()) return false;
  bool seen_dot = false;
  bool digit_before = false;
  bool digit_after = false;
  for (char c : token) {
    if (c == '.') {
      if (seen_dot || !digit_before) return false;
      seen_dot = true;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      (seen_dot ? digit_after : digit_before) = true;
    } else {
      return false;
    }
  }
  return !seen_dot || digit_after;
}

Vocab::Vocab(std::vector<std::string> tokens, TokenId mask_id, TokenId pad_id,
             std::optional<TokenId> unk_id)
    : tokens_(std::move(tokens)), mask_id_(mask_id), pad_id_(pad_id), unk_id_(unk_id) {
  if (!valid(mask_id_) || !valid(pad_id_)) {
    throw Error(ErrorKind::kInvalidInput, "vocab sentinel index out of range");
  }
  if (mask_id_ == pad_id_) {
    throw Error(ErrorKind::kInvalidInput, "mask_id and pad_id must differ");
  }
  if (unk_id_ && (!valid(*unk_id_) || *unk_id_ == mask_id_ || *unk_id_ == pad_id_)) {
    throw Error(ErrorKind::kInvalidInput, "invalid unk_id");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error(ErrorKind::kInvalidInput, "duplicate vocab token '" + tokens_[i] + "'");
    }
  }
}

const Vocab& Vocab::builtin() {
  static const Vocab vocab = [] {
    std::vector<std::string> t = {"<mask>", "<pad>", "<unk>", "####"};
    for (const char* s : {".", ",", "?", "!", ":", "$", "%", "(", ")"}) t.emplace_back(s);
    for (const char* s : {"+", "-", "*", "/", "="}) t.emplace_back(s);
    for (int i = 0; i < 100; ++i) t.push_back(std::to_string(i));
    for (const char* s : {"so", "therefore", "then", "thus", "because", "since", "hence"})
      t.emplace_back(s);
    for (const char* s : {"a", "an", "the"}) t.emplace_back(s);
    for (const char* s : {"tom", "ann", "bob", "sue", "max", "eva", "sam", "lily", "joe",
                          "kim", "ned", "ivy"})
      t.emplace_back(s);
    for (const char* s : {"he", "she", "it", "they"}) t.emplace_back(s);
    for (const char* s : {"apples", "pens", "books", "coins", "cards", "cups", "eggs",
                          "stamps", "marbles", "shells", "stickers", "cookies"})
      t.emplace_back(s);
    for (const char* s : {"has", "owns", "keeps", "starts", "with", "collects", "picks"})
      t.emplace_back(s);
    for (const char* s : {"buys", "finds", "more", "gives", "away", "loses", "gets", "times",
                          "as", "many", "how"})
      t.emplace_back(s);
    for (const char* s : {"answer", "is", "result", "final"}) t.emplace_back(s);
    for (const char* s : {"and", "of", "in", "each", "total", "are", "there"}) t.emplace_back(s);
    return Vocab(std::move(t), 0, 1, 2);
  }();
  return vocab;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::encode(std::string_view token) const {
  if (auto id = find(token)) return *id;
  if (unk_id_) return *unk_id_;
  throw Error(ErrorKind::kInvalidInput, "token '" + std::string(token) + "' not in vocab");
}

const std::string& Vocab::decode(TokenId id) const {
  if (!valid(id)) {
    throw Error(ErrorKind::kInvalidInput, "token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode_all(std::span<const std::string> tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(encode(t));
  return out;
}

std::vector<TokenId> Vocab::encode_text(std::string_view text) const {
  std::vector<TokenId> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(encode(word));
  return out;
}

std::string Vocab::decode_text(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += decode(ids[i]);
  }
  return out;
}

Vocab Vocab::extended_with(std::span<const std::string> extra) const {
  std::vector<std::string> tokens = tokens_;
  std::unordered_map<std::string, TokenId> seen = index_;
  for (const auto& t : extra) {
    if (seen.emplace(t, static_cast<TokenId>(tokens.size())).second) tokens.push_back(t);
  }
  return Vocab(std::move(tokens), mask_id_, pad_id_, unk_id_);
}

std::string Vocab::to_json() const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["mask_id"] = mask_id_;
  j["pad_id"] = pad_id_;
  if (unk_id_) j["unk_id"] = *unk_id_;
  return j.dump();
}

Vocab Vocab::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    std::optional<TokenId> unk;
    if (j.contains("unk_id")) unk = j.at("unk_id").get<TokenId>();
    return Vocab(j.at("tokens").get<std::vector<std::string>>(), j.at("mask_id").get<TokenId>(),
                 j.at("pad_id").get<TokenId>(), unk);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("vocab json: ") + e.what());
  }
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << to_json() << '\n';
}

SequenceState SequenceState::initial(std::span<const TokenId> prompt, std::size_t gen_len,
                                     TokenId mask_id) {
  std::vector<TokenId> ids(prompt.begin(), prompt.end());
  ids.resize(prompt.size() + gen_len, mask_id);
  return from_ids(std::move(ids), prompt.size(), mask_id);
}

SequenceState SequenceState::from_ids(std::vector<TokenId> ids, std::size_t prompt_len,
                                      TokenId mask_id) {
  if (prompt_len > ids.size()) {
    throw Error(ErrorKind::kInvalidInput, "prompt_len exceeds sequence length");
  }
  if (std::find(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(prompt_len), mask_id) !=
      ids.begin() + static_cast<std::ptrdiff_t>(prompt_len)) {
    throw Error(ErrorKind::kInvalidInput, "prompt contains the mask sentinel");
  }
  return SequenceState(std::move(ids), prompt_len, mask_id);
}

void SequenceState::unmask(Position p, TokenId token) {
  if (p < prompt_len_ || p >= ids_.size()) {
    throw Error(ErrorKind::kInvalidInput, "unmask outside the generation window");
  }
  if (ids_[p] != mask_id_) {
    throw Error(ErrorKind::kInvalidInput, "position " + std::to_string(p) + " already unmasked");
  }
  if (token == mask_id_) throw Error(ErrorKind::kInvalidInput, "cannot write the mask sentinel");
  ids_[p] = token;
}

std::vector<Position> masked_positions(const SequenceState& state) {
  std::vector<Position> out;
  auto ids = state.ids();
  for (Position p = state.prompt_len(); p < ids.size(); ++p) {
    if (ids[p] == state.mask_id()) out.push_back(p);
  }
  return out;
}

std::size_t tokens_per_step(std::size_t gen_len, std::size_t steps) {
  if (gen_len == 0 || steps == 0) {
    throw Error(ErrorKind::kInvalidConfig, "gen_len and steps must be positive");
  }
  return (gen_len + steps - 1) / steps;
}

const char* scheduler_name(SchedulerKind kind) noexcept {
  switch (kind) {
    case SchedulerKind::kConfidence: return "confidence";
    case SchedulerKind::kLogicDiff: return "logicdiff";
    case SchedulerKind::kRandom: return "random";
  }
  return "?";
}

SchedulerKind scheduler_from_name(std::string_view name) {
  for (auto k : {SchedulerKind::kConfidence, SchedulerKind::kLogicDiff, SchedulerKind::kRandom}) {
    if (name == scheduler_name(k)) return k;
  }
  throw Error(ErrorKind::kInvalidConfig, "unknown scheduler '" + std::string(name) + "'");
}

void GenerationConfig::validate() const {
  if (steps == 0) throw Error(ErrorKind::kInvalidConfig, "steps must be positive");
  if (gen_len == 0) throw Error(ErrorKind::kInvalidConfig, "gen_len must be positive");
  if (!(w_role >= 0.0) || !(w_conf >= 0.0) || !(w_role + w_conf > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "weights must be non-negative with positive sum");
  }
}

}  // namespace logicdiff
