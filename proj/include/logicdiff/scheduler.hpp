#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "logicdiff/backend.hpp"
#include "logicdiff/core.hpp"
#include "logicdiff/rolehead.hpp"

namespace logicdiff {

struct PriorityWeights {
  double w_role = 0.7;
  double w_conf = 0.3;

  void validate() const;
};

// w_role * role_order / 4 + w_conf * (1 - conf). Lower unmasks earlier.
double priority_score(Role role, double conf, const PriorityWeights& w) noexcept;

struct ScoredPosition {
  Position pos;
  double score;
};

// The min(k, n) lowest-scoring positions, ties to the lower index, returned in
// ascending position order. Positions must be distinct.
std::vector<Position> select_unmask_set(std::span<const ScoredPosition> scores, std::size_t k);

// Same contract with the highest value winning (confidence decoding).
std::vector<Position> baseline_select(std::span<const ScoredPosition> conf, std::size_t k);

struct UnmaskEvent {
  Position pos = 0;
  std::size_t step = 0;  // 1-based
  std::optional<Role> role;  // absent when no role head was consulted
  double conf = 0.0;
  TokenId token = 0;

  bool operator==(const UnmaskEvent&) const = default;
};

// Events in commit order: by step, then ascending position.
using UnmaskTrace = std::vector<UnmaskEvent>;

// Wall-clock seconds per phase of the loop.
struct LoopTiming {
  double backend = 0.0;
  double head = 0.0;
  double select = 0.0;  // scoring, selection and writes
  std::size_t steps = 0;

  double non_backend() const noexcept { return head + select; }
};

struct GenerationResult {
  SequenceState state;
  UnmaskTrace trace;
  std::size_t steps_run = 0;  // last step that committed tokens
  bool completed = false;
  // Set when the loop aborted; the partial state and trace are kept.
  std::optional<std::string> error;
  bool resumable = false;
  LoopTiming timing;
};

// One run of the unmasking loop. `head` is required for the logicdiff
// scheduler and optional otherwise; when present under the other schedulers it
// annotates committed positions with their predicted role.
//
// Throws kInvalidConfig for an invalid config, a missing head, or a head whose
// dimension differs from the backend's. Backend failures do not throw: the
// result carries the error and the partial trace.
GenerationResult generate(Denoiser& backend, const RoleHeadParams* head,
                          std::span<const TokenId> prompt, const GenerationConfig& cfg,
                          TokenId mask_id);

// Continues an aborted run from its next step with the same config.
GenerationResult resume(Denoiser& backend, const RoleHeadParams* head, GenerationResult partial,
                        const GenerationConfig& cfg);

// Roles grouped by predicted role obey max step(r) <= min step(r') for every
// pair of roles present with role_order(r) < role_order(r'). FILLER and
// unannotated events are exempt.
bool strict_role_phases(std::span<const UnmaskEvent> trace);

// JSONL, one {pos, step, role, conf, token} object per event; role is null
// when absent.
void write_trace(std::span<const UnmaskEvent> trace, std::ostream& out);
void write_trace(std::span<const UnmaskEvent> trace, const std::string& path);
UnmaskTrace read_trace(std::istream& in);

}  // namespace logicdiff
