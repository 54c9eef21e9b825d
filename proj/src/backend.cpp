#include "logicdiff/backend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace logicdiff {
namespace {

enum TokenFlag : std::uint8_t { kNumber = 1, kOperator = 2, kPunct = 4, kConnectiveWord = 8 };

std::uint8_t token_flags(TokenId id, const Vocab& vocab) {
  if (!vocab.valid(id)) return 0;
  const std::string& t = vocab.decode(id);
  std::uint8_t f = 0;
  if (is_numeric_literal(t)) f |= kNumber;
  if (t == "+" || t == "-" || t == "*" || t == "/" || t == "=") f |= kOperator;
  if (is_punctuation(t) || t == "####") f |= kPunct;
  if (is_connective_word(t)) f |= kConnectiveWord;
  return f;
}

double to_unit(std::uint64_t x) noexcept {
  // 53 random bits in (0, 1].
  return (static_cast<double>(x >> 11) + 1.0) * (1.0 / 9007199254740992.0);
}

}  // namespace

void DenoiserOutput::validate(std::size_t length) const {
  if (top_token.size() != length || top_prob.size() != length || hidden.rows != length) {
    throw Error(ErrorKind::kShape, "denoiser output does not cover " + std::to_string(length) +
                                       " positions");
  }
  for (double p : top_prob) {
    if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorKind::kInvalidInput, "top_prob outside (0, 1]");
  }
}

void TrapConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorKind::kInvalidConfig, "beta must be in [0, 1]");
  if (!(conn_entropy_split > 0.0 && conn_entropy_split <= 1.0)) {
    throw Error(ErrorKind::kInvalidConfig, "conn_entropy_split must be in (0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw Error(ErrorKind::kInvalidConfig, "noise_sigma must be >= 0");
  if (hidden_dim < kSyntheticFeatureDim || hidden_dim % 4 != 0) {
    throw Error(ErrorKind::kInvalidConfig, "synthetic hidden_dim must be >= 32 and a multiple of 4");
  }
}

double feature_noise(std::uint64_t fp, std::size_t w, std::size_t k) noexcept {
  const std::uint64_t base = substream_seed(fp, w);
  const std::uint64_t pair = k / 2;
  const double u1 = to_unit(splitmix64(base + 2 * pair));
  const double u2 = to_unit(splitmix64(base + 2 * pair + 1));
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return (k % 2 == 0) ? r * std::cos(theta) : r * std::sin(theta);
}

std::uint64_t fingerprint(std::span<const TokenId> a, std::span<const TokenId> b) noexcept {
  std::uint64_t h = 0x6c6f676963646966ULL;
  for (TokenId t : a) h = splitmix64(h ^ static_cast<std::uint64_t>(t));
  h = splitmix64(h ^ 0xffffffffULL);
  for (TokenId t : b) h = splitmix64(h ^ static_cast<std::uint64_t>(t));
  return h;
}

HiddenMatrix synthetic_features(std::span<const TokenId> ids, std::size_t prompt_len,
                                TokenId mask_id, std::span<const Role> window_roles,
                                std::uint64_t fp, const TrapConfig& trap, const Vocab& vocab) {
  const std::size_t n = ids.size();
  const std::size_t gen_len = n - prompt_len;
  HiddenMatrix out(n, trap.hidden_dim);

  std::vector<std::uint8_t> flags(n, 0);
  for (std::size_t p = prompt_len; p < n; ++p) {
    if (ids[p] != mask_id) flags[p] = token_flags(ids[p], vocab);
  }

  constexpr int kOffsets[4] = {-2, -1, 1, 2};
  for (std::size_t p = prompt_len; p < n; ++p) {
    const std::size_t w = p - prompt_len;
    auto row = out.row(p);
    const Role role = w < window_roles.size() ? window_roles[w] : Role::kFiller;
    for (std::size_t k = 0; k < kNumRoles; ++k) {
      row[k] = static_cast<float>((k == static_cast<std::size_t>(role) ? 1.0 : 0.0) +
                                  trap.noise_sigma * feature_noise(fp, w, k));
    }
    row[kNumRoles + std::min(kPositionBuckets - 1, w * kPositionBuckets / gen_len)] = 1.0f;
    for (std::size_t j = 0; j < 4; ++j) {
      const auto q = static_cast<std::ptrdiff_t>(w) + kOffsets[j];
      if (q < 0 || q >= static_cast<std::ptrdiff_t>(gen_len)) continue;
      const std::size_t qp = prompt_len + static_cast<std::size_t>(q);
      float* f = &row[13 + 4 * j];
      if (ids[qp] == mask_id) {
        f[0] = 1.0f;
      } else {
        f[1] = (flags[qp] & kNumber) ? 1.0f : 0.0f;
        f[2] = (flags[qp] & kOperator) ? 1.0f : 0.0f;
        f[3] = (flags[qp] & kPunct) ? 1.0f : 0.0f;
      }
    }
    row[29] = w == 0 ? 1.0f : 0.0f;
    row[30] = w + 1 == gen_len ? 1.0f : 0.0f;
    row[31] = (w > 0 && ids[p - 1] != mask_id && (flags[p - 1] & kConnectiveWord)) ? 1.0f : 0.0f;
  }
  return out;
}

SyntheticBackend::SyntheticBackend(const Problem& problem, const Vocab& vocab, TrapConfig trap)
    : vocab_(&vocab), trap_(trap) {
  trap_.validate();
  question_ = vocab.encode_all(problem.question);
  solution_ = vocab.encode_all(problem.solution);
  roles_ = problem.gold_roles;
  slots_ = annotate_slots(problem);
  fingerprint_ = logicdiff::fingerprint(question_, solution_);
  steps_.resize(problem.branch_spec.size());
  for (std::size_t s = 0; s < steps_.size(); ++s) {
    const auto& b = problem.branch_spec[s];
    steps_[s].connective = vocab.encode(b.connective);
    steps_[s].distractor_connective = vocab.encode(b.distractor_connective);
    steps_[s].op = vocab.encode(op_token(b.op));
    steps_[s].distractor_op = vocab.encode(op_token(b.distractor_op));
    steps_[s].result = vocab.encode(std::to_string(b.result));
    steps_[s].distractor_result = vocab.encode(std::to_string(b.distractor_result));
  }
  for (std::size_t w = 0; w < slots_.size(); ++w) {
    const Slot& slot = slots_[w];
    switch (slot.kind) {
      case SlotKind::kPremise: premise_offsets_.push_back(w); break;
      case SlotKind::kConnective: steps_[static_cast<std::size_t>(slot.step)].connective_offset = w; break;
      case SlotKind::kOperator: steps_[static_cast<std::size_t>(slot.step)].op_offset = w; break;
      case SlotKind::kResult: steps_[static_cast<std::size_t>(slot.step)].result_offset = w; break;
      default: break;
    }
  }
}

SyntheticBackend::Branch SyntheticBackend::connective_branch(const SequenceState& st,
                                                             std::size_t s) const {
  const std::size_t w = steps_[s].connective_offset;
  if (w >= st.gen_len()) return Branch::kUnknown;
  const TokenId t = st[st.prompt_len() + w];
  if (t == st.mask_id()) return Branch::kUnknown;
  return t == steps_[s].connective ? Branch::kCorrect : Branch::kDistractor;
}

// Branch implied by whatever of step `s` is already written: the connective
// first, then the operator.
SyntheticBackend::Branch SyntheticBackend::implied_branch(const SequenceState& st,
                                                          std::size_t s) const {
  if (Branch b = connective_branch(st, s); b != Branch::kUnknown) return b;
  const std::size_t w = steps_[s].op_offset;
  if (w >= st.gen_len()) return Branch::kUnknown;
  const TokenId t = st[st.prompt_len() + w];
  if (t == st.mask_id()) return Branch::kUnknown;
  return t == steps_[s].op ? Branch::kCorrect : Branch::kDistractor;
}

DenoiserOutput SyntheticBackend::predict(const SequenceState& st) const {
  const auto prompt = st.prompt();
  if (!std::equal(prompt.begin(), prompt.end(), question_.begin(), question_.end())) {
    throw Error(ErrorKind::kInvalidInput, "state prompt is not this problem's question");
  }
  const std::size_t n = st.size();
  const std::size_t pl = st.prompt_len();
  const TokenId mask = st.mask_id();

  DenoiserOutput out;
  out.hidden = synthetic_features(st.ids(), pl, mask, roles_, fingerprint_, trap_, *vocab_);
  out.top_token.resize(n);
  out.top_prob.resize(n);

  bool premises_revealed = true;
  for (std::size_t w : premise_offsets_) {
    if (w < st.gen_len() && st.is_masked(pl + w)) premises_revealed = false;
  }

  // Trap rule for an equation slot whose connective is still masked.
  auto trapped = [&](TokenId correct, TokenId distractor) -> std::pair<TokenId, double> {
    if (trap_.beta > 0.5) return {distractor, trap_.beta};
    return {correct, 1.0 - trap_.beta};
  };

  for (std::size_t p = 0; p < n; ++p) {
    if (st[p] != mask) {
      out.top_token[p] = st[p];
      out.top_prob[p] = 1.0;
      continue;
    }
    const std::size_t w = p - pl;
    TokenId token = vocab_->pad_id();
    double prob = kFillerProb;
    if (w < slots_.size()) {
      const Slot& slot = slots_[w];
      const auto s = static_cast<std::size_t>(std::max(slot.step, 0));
      switch (slot.kind) {
        case SlotKind::kPremise:
          token = solution_[w];
          prob = kPremiseProb;
          break;
        case SlotKind::kFiller:
          token = solution_[w];
          prob = kFillerProb;
          break;
        case SlotKind::kConclusionWord:
        case SlotKind::kEquationFixed:
          token = solution_[w];
          prob = kTemplateProb;
          break;
        case SlotKind::kConnective:
          if (premises_revealed) {
            token = steps_[s].connective;
            prob = kConnectiveResolvedProb;
          } else if (trap_.conn_entropy_split >= 0.5) {
            token = steps_[s].connective;
            prob = trap_.conn_entropy_split;
          } else {
            token = steps_[s].distractor_connective;
            prob = 1.0 - trap_.conn_entropy_split;
          }
          break;
        case SlotKind::kOperator:
        case SlotKind::kResult: {
          const bool is_op = slot.kind == SlotKind::kOperator;
          const TokenId correct = is_op ? steps_[s].op : steps_[s].result;
          const TokenId distractor = is_op ? steps_[s].distractor_op : steps_[s].distractor_result;
          switch (connective_branch(st, s)) {
            case Branch::kCorrect: token = correct; prob = kDerivedResolvedProb; break;
            case Branch::kDistractor: token = distractor; prob = kDerivedResolvedProb; break;
            case Branch::kUnknown: std::tie(token, prob) = trapped(correct, distractor); break;
          }
          break;
        }
        case SlotKind::kAnswer: {
          // Follows the last equation: its written result, else its implied branch.
          const auto& last = steps_.back();
          prob = kAnswerProb;
          if (last.result_offset < st.gen_len() && !st.is_masked(pl + last.result_offset)) {
            token = st[pl + last.result_offset];
          } else {
            switch (implied_branch(st, steps_.size() - 1)) {
              case Branch::kCorrect: token = last.result; break;
              case Branch::kDistractor: token = last.distractor_result; break;
              case Branch::kUnknown: token = trapped(last.result, last.distractor_result).first; break;
            }
          }
          break;
        }
      }
    }
    out.top_token[p] = token;
    out.top_prob[p] = prob;
  }
  return out;
}

DenoiserOutput SyntheticBackend::forward(const SequenceState& state) { return predict(state); }

DenoiserOutput synthetic_forward(const Problem& problem, const SequenceState& state,
                                 const TrapConfig& trap, const Vocab& vocab) {
  return SyntheticBackend(problem, vocab, trap).predict(state);
}

LabeledHidden collect_hidden_states(std::span<const LabeledSequence> sequences,
                                    const HiddenSource& source, const CollectConfig& cfg,
                                    TokenId mask_id, TokenId pad_id) {
  LabeledHidden data;
  if (sequences.empty() || cfg.max_samples == 0) return data;
  std::size_t visits = 0;
  std::size_t since_progress = 0;
  while (data.size() < cfg.max_samples) {
    const LabeledSequence& seq = sequences[visits % sequences.size()];
    Rng rng = make_rng(cfg.rng_seed, visits);
    ++visits;
    const std::size_t len = std::max(seq.token_ids.size(), cfg.gen_len);
    if (len == 0) {
      if (++since_progress > sequences.size()) break;
      continue;
    }
    std::vector<TokenId> ids = seq.token_ids;
    std::vector<Role> roles = seq.roles;
    ids.resize(len, pad_id);
    roles.resize(len, Role::kFiller);

    // Ratio uniform on (0, 1]; at least one position masked.
    const double ratio = 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto n_mask = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(len))), 1, len);
    std::vector<std::size_t> order(len);
    for (std::size_t i = 0; i < len; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(n_mask);
    std::sort(order.begin(), order.end());
    for (std::size_t i : order) ids[i] = mask_id;

    const SequenceState state = SequenceState::from_ids(std::move(ids), 0, mask_id);
    const HiddenMatrix hidden = source(state, seq.token_ids, roles);
    if (hidden.rows != len) throw Error(ErrorKind::kShape, "hidden source returned wrong row count");
    for (std::size_t i : order) {
      if (data.size() == cfg.max_samples) break;
      data.push(hidden.row(i), roles[i]);
    }
    since_progress = 0;
  }
  return data;
}

RoleHeadParams role_block_probe(std::size_t dim) {
  if (dim < kSyntheticFeatureDim) throw Error(ErrorKind::kShape, "probe needs the synthetic layout");
  RoleHeadParams p = RoleHeadParams::zeros(dim, 0.0f);
  // LayerNorm preserves the order within the row; the +10 offset keeps every
  // unit on the increasing branch of GELU.
  const std::size_t d = dim;
  for (std::size_t k = 0; k < kNumRoles; ++k) {
    p.w1[k * d + k] = 1.0f;
    p.b1[k] = 10.0f;
    p.w2[k * p.hidden_units() + k] = 1.0f;
  }
  return p;
}

HiddenSource synthetic_hidden_source(const TrapConfig& trap, const Vocab& vocab) {
  trap.validate();
  return [trap, &vocab](const SequenceState& state, std::span<const TokenId> clean,
                        std::span<const Role> roles) {
    // Noise is keyed by the clean content so it is stable across mask draws.
    return synthetic_features(state.ids(), state.prompt_len(), state.mask_id(), roles,
                              fingerprint(clean, {}), trap, vocab);
  };
}

std::vector<LabeledSequence> labeled_from_corpus(std::span<const Problem> problems,
                                                 const Vocab& vocab) {
  std::vector<LabeledSequence> out;
  out.reserve(problems.size());
  for (const auto& p : problems) out.push_back({vocab.encode_all(p.solution), p.gold_roles});
  return out;
}

}  // namespace logicdiff
