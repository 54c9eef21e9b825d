#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "logicdiff/error.hpp"

namespace logicdiff {

using TokenId = std::int32_t;
using Position = std::size_t;

// Logical role of a solution token. Numeric values double as the role order
// used by the dependency scheduler: premises first, filler last.
enum class Role : std::uint8_t {
  kPremise = 0,
  kConnective = 1,
  kDerived = 2,
  kConclusion = 3,
  kFiller = 4,
};

inline constexpr std::size_t kNumRoles = 5;
inline constexpr std::array<Role, kNumRoles> kAllRoles = {
    Role::kPremise, Role::kConnective, Role::kDerived, Role::kConclusion, Role::kFiller};

constexpr int role_order(Role r) noexcept { return static_cast<int>(r); }
constexpr int role_id(Role r) noexcept { return static_cast<int>(r); }

// Throws kInvalidInput outside [0, 4].
Role role_from_id(int id);
const char* role_name(Role r) noexcept;
std::optional<Role> role_from_name(std::string_view name);

// True for plain non-negative numerals, optionally with a single decimal
// point ("12", "1.5"). Commas are not accepted; strip them first.
bool is_numeric_literal(std::string_view token) noexcept;

// Closed token inventory. Index 0 is MASK and index 1 is PAD in the builtin
// vocabulary; files may place sentinels elsewhere as long as they are distinct.
class Vocab {
 public:
  Vocab(std::vector<std::string> tokens, TokenId mask_id, TokenId pad_id,
        std::optional<TokenId> unk_id = std::nullopt);

  // Words, integers 0..99, operators, punctuation, and the "####" answer marker.
  static const Vocab& builtin();

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId mask_id() const noexcept { return mask_id_; }
  TokenId pad_id() const noexcept { return pad_id_; }
  std::optional<TokenId> unk_id() const noexcept { return unk_id_; }
  bool valid(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
  }

  std::optional<TokenId> find(std::string_view token) const;
  // Falls back to UNK for unknown strings; throws kInvalidInput without one.
  TokenId encode(std::string_view token) const;
  const std::string& decode(TokenId id) const;

  std::vector<TokenId> encode_all(std::span<const std::string> tokens) const;
  std::vector<TokenId> encode_text(std::string_view whitespace_separated) const;
  std::string decode_text(std::span<const TokenId> ids) const;

  // Returns a vocabulary extended with every token in `extra` not yet present,
  // appended in first-seen order. Sentinel ids are preserved.
  Vocab extended_with(std::span<const std::string> extra) const;

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::string to_json() const;
  static Vocab from_json(std::string_view text);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId mask_id_;
  TokenId pad_id_;
  std::optional<TokenId> unk_id_;
};

// Token buffer: an immutable prompt prefix followed by the generation window.
// The only mutation is unmask(), which writes a masked window slot exactly once.
class SequenceState {
 public:
  static SequenceState initial(std::span<const TokenId> prompt, std::size_t gen_len,
                               TokenId mask_id);
  // For reconstructing partially denoised states (fixtures, resumption).
  static SequenceState from_ids(std::vector<TokenId> ids, std::size_t prompt_len,
                                TokenId mask_id);

  std::span<const TokenId> ids() const noexcept { return ids_; }
  std::span<const TokenId> prompt() const noexcept {
    return std::span<const TokenId>(ids_).first(prompt_len_);
  }
  std::span<const TokenId> window() const noexcept {
    return std::span<const TokenId>(ids_).subspan(prompt_len_);
  }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t prompt_len() const noexcept { return prompt_len_; }
  std::size_t gen_len() const noexcept { return ids_.size() - prompt_len_; }
  TokenId mask_id() const noexcept { return mask_id_; }
  TokenId operator[](Position p) const { return ids_.at(p); }
  bool is_masked(Position p) const { return ids_.at(p) == mask_id_; }

  // Throws kInvalidInput when `p` is in the prompt, already unmasked, or when
  // `token` is the mask sentinel.
  void unmask(Position p, TokenId token);

 private:
  SequenceState(std::vector<TokenId> ids, std::size_t prompt_len, TokenId mask_id)
      : ids_(std::move(ids)), prompt_len_(prompt_len), mask_id_(mask_id) {}

  std::vector<TokenId> ids_;
  std::size_t prompt_len_;
  TokenId mask_id_;
};

// Strictly increasing masked positions; always inside the generation window.
std::vector<Position> masked_positions(const SequenceState& state);

// ceil(gen_len / steps). Throws kInvalidConfig on zero inputs.
std::size_t tokens_per_step(std::size_t gen_len, std::size_t steps);

enum class SchedulerKind { kConfidence, kLogicDiff, kRandom };

const char* scheduler_name(SchedulerKind kind) noexcept;
SchedulerKind scheduler_from_name(std::string_view name);

struct GenerationConfig {
  std::size_t steps = 256;
  std::size_t gen_len = 256;
  double w_role = 0.7;
  double w_conf = 0.3;
  SchedulerKind scheduler = SchedulerKind::kLogicDiff;
  std::uint64_t rng_seed = 0;

  // Throws kInvalidConfig.
  void validate() const;
};

}  // namespace logicdiff
