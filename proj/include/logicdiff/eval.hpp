#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "logicdiff/backend.hpp"
#include "logicdiff/corpus.hpp"
#include "logicdiff/scheduler.hpp"

namespace logicdiff {

// Integer after the last "####" token; none if the marker is absent, last, or
// followed by something other than an integer.
std::optional<std::int64_t> extract_answer(std::span<const std::string> tokens);
std::optional<std::int64_t> extract_answer(std::span<const TokenId> ids, const Vocab& vocab);

struct RoleStepStat {
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;

  bool operator==(const RoleStepStat&) const = default;
};

// Indexed by role id; nullopt for roles that never occur.
using RoleStepStats = std::array<std::optional<RoleStepStat>, kNumRoles>;

// Unmask steps grouped by predicted role. Unannotated events are skipped.
RoleStepStats role_step_stats(std::span<const UnmaskTrace> traces);

struct ArmTiming {
  double mean_seconds = 0.0;  // per timed example, full loop
  double mean_backend_seconds = 0.0;
  // Seconds per step spent in the role head, and in scoring plus selection.
  double mean_head_per_step = 0.0;
  double mean_select_per_step = 0.0;
  std::size_t timed = 0;  // examples after warm-up, errors excluded
  // Against the first confidence arm; absent without one.
  std::optional<double> overhead_ratio;  // full loop
  std::optional<double> scoring_ratio;   // scoring plus selection per step

  bool operator==(const ArmTiming&) const = default;
};

struct ArmReport {
  std::string name;
  SchedulerKind scheduler = SchedulerKind::kConfidence;
  std::size_t n_total = 0;
  std::size_t n_correct = 0;
  std::size_t n_errored = 0;
  double accuracy = 0.0;
  // Fraction of completed runs whose trace satisfies strict_role_phases; absent
  // when no run carried role annotations.
  std::optional<double> strict_phase_fraction;
  RoleStepStats role_steps{};
  ArmTiming timing;

  bool operator==(const ArmReport&) const = default;
};

struct ProblemRecord {
  std::size_t index = 0;
  std::string arm;
  std::int64_t gold = 0;
  std::optional<std::int64_t> predicted;
  bool correct = false;
  bool errored = false;
  std::string error;
  std::size_t steps = 0;
  std::optional<bool> strict_phases;
  double seconds = 0.0;

  bool operator==(const ProblemRecord&) const = default;
};

struct EvalConfig {
  GenerationConfig generation;  // the scheduler field is overridden per arm
  std::vector<SchedulerKind> arms = {SchedulerKind::kConfidence, SchedulerKind::kLogicDiff};
  std::uint64_t seed = 0;
  std::size_t warmup = 5;  // leading problems excluded from timing
  bool parallel = true;
  bool keep_traces = false;
  // Echoed into the report only.
  std::string backend = "synthetic";
  std::optional<TrapConfig> trap;

  void validate() const;
};

struct EvalReport {
  EvalConfig config;
  std::size_t n_problems = 0;
  std::vector<ArmReport> arms;
  std::vector<ProblemRecord> records;  // problem-major, arms in config order
  // Per arm, per problem; filled only with keep_traces.
  std::vector<std::vector<UnmaskTrace>> traces;
};

// Creates the backend for one problem; called concurrently from worker threads.
using BackendFactory = std::function<std::unique_ptr<Denoiser>(std::size_t index, const Problem&)>;

BackendFactory synthetic_factory(const Vocab& vocab, TrapConfig trap);

// Runs every arm on every problem. Per-problem seeds are substreams of
// cfg.seed; arms run back to back on each problem in an order rotated by the
// problem index so no arm always runs first. Throws kInvalidInput for an empty
// corpus and kInvalidConfig for configs generate() rejects.
EvalReport evaluate(std::span<const Problem> problems, const Vocab& vocab, const EvalConfig& cfg,
                    const BackendFactory& factory, const RoleHeadParams* head);

// Report schema v1.
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
// Copy with every "timing" member removed, for byte-level comparisons.
nlohmann::json mask_timing(nlohmann::json j);

enum class ReportFormat { kJson, kCsv, kSvg };
ReportFormat report_format_from_name(std::string_view name);

// CSV: header "arm,metric,value", then one row per (arm, metric) over kCsvMetrics.
inline constexpr std::array<const char*, 13> kCsvMetrics = {
    "accuracy",        "n_total",         "n_correct",         "n_errored",
    "strict_phase_fraction", "mean_step_premise", "mean_step_connective", "mean_step_derived",
    "mean_step_conclusion",  "mean_step_filler",  "mean_seconds",        "overhead_ratio",
    "scoring_ratio"};

std::string render_report(const EvalReport& report, ReportFormat format);
void emit_report(const EvalReport& report, const std::string& path, ReportFormat format);

}  // namespace logicdiff
