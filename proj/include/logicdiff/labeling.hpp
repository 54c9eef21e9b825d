#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "logicdiff/core.hpp"

namespace logicdiff {

struct LabeledToken {
  TokenId token_id = 0;
  Role role = Role::kFiller;
  std::string text;

  bool operator==(const LabeledToken&) const = default;
};

// Character span [begin, end) into the source text.
struct TextSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const TextSpan&) const = default;
};

// Normalization applied to every text before labeling:
//   - ASCII lowercase;
//   - "<<...>>" calculator annotations removed;
//   - thousands separators inside numbers dropped ("1,000" -> "1000");
//   - punctuation and operators split into their own tokens, except a '.'
//     between two digits and a '-' between two letters;
//   - runs of '#' kept together so "####" survives as the answer marker.
std::vector<std::string> normalize_tokens(std::string_view text);

// Splits after '.', '!', '?' and newlines (delimiter kept with the preceding
// span). A '.' with digits on both sides does not split.
std::vector<TextSpan> segment_sentences(std::string_view text);

// Pass 1. Checked in order:
//   CONCLUSION  if `is_last` or the sentence contains "####";
//   DERIVED     if it contains `num op num = num` or a number absent from the question;
//   PREMISE     if it has at least one number (all of them from the question);
//   FILLER      otherwise.
Role classify_sentence_role(std::span<const std::string> sentence,
                            std::span<const std::string> question, bool is_last);

bool is_connective_word(std::string_view token) noexcept;
bool is_article(std::string_view token) noexcept;
bool is_punctuation(std::string_view token) noexcept;

// Pass 2: lexicon words are relabeled CONNECTIVE unconditionally.
std::vector<LabeledToken> connective_override(std::vector<LabeledToken> labeled);

// segment -> classify -> broadcast (punctuation, articles, UNK get FILLER) -> override.
std::vector<LabeledToken> label_solution(std::string_view question, std::string_view solution,
                                         const Vocab& vocab);

struct ClassWeights {
  std::array<double, kNumRoles> weight{1.0, 10.0, 1.0, 2.0, 0.5};

  double operator[](Role r) const noexcept { return weight[static_cast<std::size_t>(r)]; }
};

struct ClassWeightReport {
  ClassWeights weights;
  std::array<std::size_t, kNumRoles> counts{};
  std::array<double, kNumRoles> distribution{};
  std::size_t total = 0;
};

// Weights are fixed (PREMISE 1, CONNECTIVE 10, DERIVED 1, CONCLUSION 2,
// FILLER 0.5); the empirical distribution is reported alongside.
// Throws kInvalidInput on an empty multiset.
ClassWeightReport compute_class_weights(std::span<const Role> labels);

// Labeled-token JSONL: {"token_ids": [...], "roles": [...]} per solution.
struct LabeledSequence {
  std::vector<TokenId> token_ids;
  std::vector<Role> roles;
};

std::string labeled_to_json_line(std::span<const LabeledToken> labeled);
std::vector<LabeledSequence> read_labeled(const std::string& path);

}  // namespace logicdiff
