#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "logicdiff/core.hpp"
#include "logicdiff/rng.hpp"

namespace logicdiff {

enum class Op : char { kAdd = '+', kSub = '-', kMul = '*' };

int apply_op(Op op, int lhs, int rhs) noexcept;
std::string op_token(Op op);
Op op_from_token(std::string_view token);

// One reasoning step: the correct operation and the distractor that the trap
// commits to when the step's connective is still masked. Both branches share
// the left operand and the operand.
struct BranchStep {
  int lhs = 0;
  int operand = 0;
  Op op = Op::kAdd;
  int result = 0;
  Op distractor_op = Op::kSub;
  int distractor_result = 0;
  std::string connective;
  std::string distractor_connective;

  bool operator==(const BranchStep&) const = default;
};

struct Problem {
  std::vector<std::string> question;
  std::vector<std::string> solution;
  int answer = 0;
  int premise_value = 0;
  std::vector<Role> gold_roles;
  std::vector<BranchStep> branch_spec;

  bool operator==(const Problem&) const = default;
};

// Replays the correct branch from the premise value.
int evaluate_chain(const Problem& problem);

struct CorpusConfig {
  std::size_t n_problems = 100;
  int steps_min = 2;
  int steps_max = 5;
  int value_max = 20;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Values (operands, results, distractor results) stay in [0, min(99, value_max^2)]
// so every number is a vocabulary token.
Problem generate_problem(const CorpusConfig& cfg, Rng& rng);
// Problem i is drawn from substream (rng_seed, i).
std::vector<Problem> generate_corpus(const CorpusConfig& cfg);

// Structural position of each solution token, recovered from the templates.
enum class SlotKind : std::uint8_t {
  kPremise,
  kFiller,
  kConclusionWord,
  kConnective,
  kEquationFixed,  // left operand, operand, '=': identical on both branches
  kOperator,
  kResult,
  kAnswer,
};

struct Slot {
  SlotKind kind = SlotKind::kFiller;
  int step = -1;  // reasoning step for connective/equation slots
};

// Throws kInvalidInput when the solution does not follow the templates.
std::vector<Slot> annotate_slots(const Problem& problem);

// Corpus JSONL: a header object, then one object per problem.
void write_corpus(std::ostream& out, const CorpusConfig& cfg, const std::vector<Problem>& problems);
void write_corpus(const std::string& path, const CorpusConfig& cfg,
                  const std::vector<Problem>& problems);
std::vector<Problem> read_corpus(std::istream& in);
std::vector<Problem> read_corpus(const std::string& path);

std::string problem_to_json_line(const Problem& problem);
Problem problem_from_json_line(std::string_view line);

struct SolutionRecord {
  std::size_t line = 0;  // 1-based
  std::string question;
  std::string solution;
};

struct IngestResult {
  std::vector<SolutionRecord> records;
  std::vector<std::string> diagnostics;
};

// GSM8K-style JSONL ({"question", "answer"} with "#### <n>" in the answer).
// Bad records become diagnostics; an unreadable file throws kIo.
IngestResult ingest_solutions(const std::string& path);
IngestResult ingest_solutions(std::istream& in);

}  // namespace logicdiff
