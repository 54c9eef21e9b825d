#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "logicdiff/core.hpp"
#include "logicdiff/corpus.hpp"
#include "logicdiff/labeling.hpp"
#include "logicdiff/rolehead.hpp"

namespace logicdiff {

// One forward pass: a hidden row per position plus the top-1 prediction and
// its probability. Unmasked positions echo their own token with probability 1.
struct DenoiserOutput {
  HiddenMatrix hidden;
  std::vector<TokenId> top_token;
  std::vector<double> top_prob;

  std::size_t size() const noexcept { return top_token.size(); }
  // Throws kShape / kInvalidInput when the output cannot describe `length` positions.
  void validate(std::size_t length) const;

  bool operator==(const DenoiserOutput&) const = default;
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::size_t hidden_dim() = 0;
  virtual DenoiserOutput forward(const SequenceState& state) = 0;
};

struct TrapConfig {
  // Mass on the distractor branch for an equation whose connective is masked.
  double beta = 0.9;
  // Mass on the correct connective while any premise slot is still masked.
  double conn_entropy_split = 0.5;
  // Gaussian noise on the role block of the hidden vector.
  double noise_sigma = 0.25;
  std::size_t hidden_dim = 32;

  void validate() const;
};

// Layout of a synthetic hidden row (the first 32 dimensions; any extra
// dimensions are zero):
//   [0, 5)   one-hot gold role + noise_sigma * N(0, 1)
//   [5, 13)  one-hot position bucket, floor(8 * offset / gen_len)
//   [13, 29) for neighbours at offsets -2, -1, +1, +2: masked, number,
//            operator or '=', punctuation or answer marker
//   29       first window slot
//   30       last window slot
//   31       left neighbour is a revealed connective word
inline constexpr std::size_t kSyntheticFeatureDim = 32;
inline constexpr std::size_t kPositionBuckets = 8;

// Probabilities the oracle attaches to its top-1 predictions.
inline constexpr double kPremiseProb = 0.95;
inline constexpr double kTemplateProb = 0.95;  // conclusion words, shared equation tokens
inline constexpr double kDerivedResolvedProb = 0.95;
inline constexpr double kConnectiveResolvedProb = 0.85;
inline constexpr double kAnswerProb = 0.9;
inline constexpr double kFillerProb = 0.98;

// Deterministic noise stream: standard normal draw `k` for window offset `w`
// under `fingerprint` (Box-Muller over splitmix64, independent of the stdlib).
double feature_noise(std::uint64_t fingerprint, std::size_t w, std::size_t k) noexcept;

std::uint64_t fingerprint(std::span<const TokenId> a, std::span<const TokenId> b) noexcept;

// Hidden rows for every position of `ids`. `window_roles` holds gold roles for
// the first window offsets; offsets past its end are treated as FILLER
// padding. Prompt rows carry only the context flags.
HiddenMatrix synthetic_features(std::span<const TokenId> ids, std::size_t prompt_len,
                                TokenId mask_id, std::span<const Role> window_roles,
                                std::uint64_t fingerprint, const TrapConfig& trap,
                                const Vocab& vocab);

// Oracle denoiser for one corpus problem. It reproduces the confidence trap:
// an equation committed before its connective follows the distractor branch.
class SyntheticBackend final : public Denoiser {
 public:
  SyntheticBackend(const Problem& problem, const Vocab& vocab, TrapConfig trap = {});

  std::size_t hidden_dim() override { return trap_.hidden_dim; }
  DenoiserOutput forward(const SequenceState& state) override;
  DenoiserOutput predict(const SequenceState& state) const;

  std::span<const TokenId> prompt() const noexcept { return question_; }
  std::span<const TokenId> solution() const noexcept { return solution_; }
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

 private:
  struct StepTokens {
    TokenId connective, distractor_connective;
    TokenId op, distractor_op;
    TokenId result, distractor_result;
    std::size_t connective_offset = 0, op_offset = 0, result_offset = 0;
  };

  enum class Branch { kUnknown, kCorrect, kDistractor };
  Branch connective_branch(const SequenceState& st, std::size_t s) const;
  Branch implied_branch(const SequenceState& st, std::size_t s) const;

  const Vocab* vocab_;
  TrapConfig trap_;
  std::vector<TokenId> question_;
  std::vector<TokenId> solution_;
  std::vector<Role> roles_;
  std::vector<Slot> slots_;
  std::vector<StepTokens> steps_;
  std::vector<std::size_t> premise_offsets_;
  std::uint64_t fingerprint_ = 0;
};

// One-shot oracle call; throws kInvalidInput when the prompt is not the
// problem's question.
DenoiserOutput synthetic_forward(const Problem& problem, const SequenceState& state,
                                 const TrapConfig& trap, const Vocab& vocab);

// Produces hidden rows for a (partially masked) sequence whose clean tokens
// and gold roles are known. Prompt length is zero: only solution windows are
// collected.
using HiddenSource = std::function<HiddenMatrix(
    const SequenceState& state, std::span<const TokenId> clean, std::span<const Role> roles)>;

struct CollectConfig {
  std::size_t max_samples = 50000;
  // Window length; sequences are padded with PAD (FILLER) up to it. 0 keeps
  // each sequence's own length.
  std::size_t gen_len = 0;
  std::uint64_t rng_seed = 0;
};

// Masks each sequence at a ratio drawn uniformly from (0, 1], runs the source
// and keeps the hidden rows of masked positions labeled with their gold role.
// Cycles over the sequences until `max_samples` rows are collected.
LabeledHidden collect_hidden_states(std::span<const LabeledSequence> sequences,
                                    const HiddenSource& source, const CollectConfig& cfg,
                                    TokenId mask_id, TokenId pad_id);

// Fixed head whose argmax is the argmax of the role block [0, 5) of a
// synthetic row: exact roles when noise_sigma is 0, and never influenced by
// context flags.
RoleHeadParams role_block_probe(std::size_t dim = kSyntheticFeatureDim);

HiddenSource synthetic_hidden_source(const TrapConfig& trap, const Vocab& vocab);

std::vector<LabeledSequence> labeled_from_corpus(std::span<const Problem> problems,
                                                 const Vocab& vocab);

}  // namespace logicdiff
