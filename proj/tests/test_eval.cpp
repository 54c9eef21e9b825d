#include <gtest/gtest.h>

#include <regex>
#include <sstream>

#include "logicdiff/eval.hpp"

using namespace logicdiff;

namespace {

const Vocab& vocab() { return Vocab::builtin(); }

std::vector<Problem> corpus(std::size_t n, std::uint64_t seed) {
  CorpusConfig cc;
  cc.n_problems = n;
  cc.rng_seed = seed;
  return generate_corpus(cc);
}

EvalConfig small_cfg() {
  EvalConfig cfg;
  cfg.generation.steps = cfg.generation.gen_len = 64;
  cfg.seed = 9;
  return cfg;
}

EvalReport run_eval(const std::vector<Problem>& problems, EvalConfig cfg, TrapConfig trap = {}) {
  const auto probe = role_block_probe();
  return evaluate(problems, vocab(), cfg, synthetic_factory(vocab(), trap), &probe);
}

std::vector<std::string> words(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Tag balance plus quoted attributes; enough to catch broken SVG output.
bool well_formed_xml(const std::string& doc, std::string* why) {
  std::vector<std::string> stack;
  const std::regex attr(R"(\s+[A-Za-z_:][-A-Za-z0-9_:.]*="[^"<]*")");
  std::size_t i = 0;
  while ((i = doc.find('<', i)) != std::string::npos) {
    const auto close = doc.find('>', i);
    if (close == std::string::npos) return *why = "unterminated tag", false;
    std::string tag = doc.substr(i + 1, close - i - 1);
    i = close + 1;
    if (tag.starts_with("?") || tag.starts_with("!")) continue;
    if (tag.starts_with("/")) {
      if (stack.empty() || stack.back() != tag.substr(1)) return *why = "mismatched </" + tag.substr(1) + ">", false;
      stack.pop_back();
      continue;
    }
    const bool self = tag.ends_with("/");
    if (self) tag.pop_back();
    const auto sp = tag.find_first_of(" \t\n");
    const std::string name = tag.substr(0, sp);
    if (sp != std::string::npos) {
      const std::string rest = std::regex_replace(tag.substr(sp), attr, "");
      if (rest.find_first_not_of(" \t\n") != std::string::npos) return *why = "bad attributes in <" + name + ">", false;
    }
    if (!self) stack.push_back(name);
  }
  if (!stack.empty()) return *why = "unclosed <" + stack.back() + ">", false;
  return true;
}

}  // namespace

TEST(ExtractAnswer, Examples) {
  EXPECT_EQ(extract_answer(words("so the answer is #### 5")), 5);
  EXPECT_FALSE(extract_answer(words("no marker here 5")));
  EXPECT_EQ(extract_answer(words("#### 3 then #### 7")), 7);
  EXPECT_FALSE(extract_answer(words("ends with ####")));
  EXPECT_FALSE(extract_answer(words("#### seven")));
  EXPECT_EQ(extract_answer(words("#### -4")), -4);
  const std::vector<TokenId> ids = {vocab().encode("####"), vocab().encode("12"), vocab().pad_id()};
  EXPECT_EQ(extract_answer(ids, vocab()), 12);
}

TEST(RoleStepStats, AbsentRolesAndSingleValues) {
  UnmaskTrace t;
  UnmaskEvent e;
  e.role = Role::kDerived;
  e.step = 4;
  t.push_back(e);
  e.step = 3;
  e.role.reset();
  t.push_back(e);
  const std::vector<UnmaskTrace> traces = {t};
  const auto s = role_step_stats(traces);
  ASSERT_TRUE(s[2]);
  EXPECT_DOUBLE_EQ(s[2]->mean, 4.0);
  EXPECT_DOUBLE_EQ(s[2]->median, s[2]->mean);
  EXPECT_EQ(s[2]->count, 1u);
  for (std::size_t r : {0u, 1u, 3u, 4u}) EXPECT_FALSE(s[r]);
}

TEST(RoleStepStats, MedianOfEvenCount) {
  UnmaskTrace t;
  for (std::size_t step : {1u, 2u, 6u, 9u}) {
    UnmaskEvent e;
    e.role = Role::kPremise;
    e.step = step;
    t.push_back(e);
  }
  const auto s = role_step_stats(std::vector<UnmaskTrace>{t});
  EXPECT_DOUBLE_EQ(s[0]->median, 4.0);
  EXPECT_DOUBLE_EQ(s[0]->mean, 4.5);
}

TEST(Evaluate, CountsAreConsistentWithRecords) {
  const auto problems = corpus(40, 1);
  const auto rep = run_eval(problems, small_cfg());
  ASSERT_EQ(rep.arms.size(), 2u);
  ASSERT_EQ(rep.records.size(), 80u);
  for (std::size_t a = 0; a < rep.arms.size(); ++a) {
    std::size_t correct = 0;
    for (const auto& r : rep.records) {
      if (r.arm != rep.arms[a].name) continue;
      correct += r.correct;
      EXPECT_EQ(r.gold, problems[r.index].answer);
      EXPECT_EQ(r.correct, r.predicted && *r.predicted == r.gold);
    }
    EXPECT_EQ(correct, rep.arms[a].n_correct);
    EXPECT_EQ(rep.arms[a].n_total, 40u);
    EXPECT_DOUBLE_EQ(rep.arms[a].accuracy, static_cast<double>(correct) / 40.0);
    EXPECT_EQ(rep.arms[a].timing.timed, 35u) << "five warm-up problems excluded";
  }
  EXPECT_EQ(rep.arms[0].name, "confidence");
  EXPECT_EQ(rep.arms[1].name, "logicdiff");
  EXPECT_GT(rep.arms[1].accuracy, rep.arms[0].accuracy);
}

TEST(Evaluate, DeterministicUpToTiming) {
  const auto problems = corpus(30, 2);
  const auto a = mask_timing(report_to_json(run_eval(problems, small_cfg()))).dump();
  const auto b = mask_timing(report_to_json(run_eval(problems, small_cfg()))).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.find("timing"), std::string::npos);
  EXPECT_EQ(a.find("seconds"), std::string::npos);
}

TEST(Evaluate, ParallelEqualsSerial) {
  const auto problems = corpus(30, 3);
  auto cfg = small_cfg();
  cfg.arms = {SchedulerKind::kConfidence, SchedulerKind::kLogicDiff, SchedulerKind::kRandom};
  cfg.keep_traces = true;
  const auto par = run_eval(problems, cfg);
  cfg.parallel = false;
  const auto ser = run_eval(problems, cfg);
  EXPECT_EQ(mask_timing(report_to_json(par)), mask_timing(report_to_json(ser)));
  EXPECT_EQ(par.traces, ser.traces);
}

TEST(Evaluate, SelfComparisonHasUnitRatio) {
  const auto problems = corpus(60, 4);
  auto cfg = small_cfg();
  cfg.arms = {SchedulerKind::kConfidence, SchedulerKind::kConfidence};
  const auto rep = run_eval(problems, cfg);
  ASSERT_EQ(rep.arms.size(), 2u);
  EXPECT_EQ(rep.arms[1].name, "confidence_2");
  EXPECT_EQ(rep.arms[0].accuracy, rep.arms[1].accuracy);
  ASSERT_TRUE(rep.arms[1].timing.overhead_ratio);
  EXPECT_DOUBLE_EQ(*rep.arms[0].timing.overhead_ratio, 1.0);
  // Wall-clock; the rotated arm order keeps both arms on equal footing.
  EXPECT_GE(*rep.arms[1].timing.overhead_ratio, 0.95);
  EXPECT_LE(*rep.arms[1].timing.overhead_ratio, 1.05);
}

TEST(Evaluate, TrapDisabledClosesTheGap) {
  const auto problems = corpus(100, 5);
  TrapConfig trap;
  trap.beta = 0.0;
  const auto rep = run_eval(problems, small_cfg(), trap);
  EXPECT_GE(rep.arms[0].accuracy, 0.95);
  EXPECT_GE(rep.arms[1].accuracy, 0.95);
}

TEST(Evaluate, ErroredRunsCountAsWrongAndSkipTiming) {
  const auto problems = corpus(12, 6);
  auto cfg = small_cfg();
  cfg.warmup = 0;
  cfg.arms = {SchedulerKind::kConfidence};
  // Problem 3 gets a backend whose prompt check rejects the question.
  const auto base = synthetic_factory(vocab(), TrapConfig{});
  const BackendFactory factory = [&](std::size_t i, const Problem& p) {
    return base(i, i == 3 ? problems[(i + 1) % problems.size()] : p);
  };
  const auto rep = evaluate(problems, vocab(), cfg, factory, nullptr);
  EXPECT_EQ(rep.arms[0].n_errored, 1u);
  EXPECT_EQ(rep.arms[0].timing.timed, 11u);
  EXPECT_TRUE(rep.records[3].errored);
  EXPECT_FALSE(rep.records[3].correct);
  EXPECT_FALSE(rep.records[3].error.empty());
}

TEST(Evaluate, RejectsEmptyCorpusAndBadConfig) {
  const std::vector<Problem> none;
  EXPECT_THROW(run_eval(none, small_cfg()), Error);
  auto cfg = small_cfg();
  cfg.arms.clear();
  EXPECT_THROW(run_eval(corpus(3, 1), cfg), Error);
  cfg = small_cfg();
  EXPECT_THROW(evaluate(corpus(3, 1), vocab(), cfg, synthetic_factory(vocab(), {}), nullptr), Error)
      << "logicdiff arm without a head";
}

TEST(Report, JsonRoundTrip) {
  auto cfg = small_cfg();
  cfg.trap = TrapConfig{};
  const auto rep = run_eval(corpus(20, 7), cfg);
  const auto j = report_to_json(rep);
  EXPECT_EQ(j.at("format"), "logicdiff-eval");
  EXPECT_EQ(j.at("version"), 1);
  const auto back = report_from_json(j);
  EXPECT_EQ(back.arms, rep.arms);
  EXPECT_EQ(back.records, rep.records);
  EXPECT_EQ(back.n_problems, rep.n_problems);
  EXPECT_EQ(report_to_json(back), j);
}

TEST(Report, CsvHasOneRowPerArmAndMetric) {
  const auto rep = run_eval(corpus(10, 8), small_cfg());
  const auto csv = render_report(rep, ReportFormat::kCsv);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "arm,metric,value");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  EXPECT_EQ(rows, rep.arms.size() * kCsvMetrics.size());
}

TEST(Report, SvgIsWellFormedWithOneGroupPerArm) {
  auto cfg = small_cfg();
  cfg.arms = {SchedulerKind::kConfidence, SchedulerKind::kLogicDiff, SchedulerKind::kRandom};
  const auto rep = run_eval(corpus(10, 9), cfg);
  const auto svg = render_report(rep, ReportFormat::kSvg);
  std::string why;
  EXPECT_TRUE(well_formed_xml(svg, &why)) << why;
  std::size_t groups = 0;
  for (std::size_t at = 0; (at = svg.find("<g class=\"arm\"", at)) != std::string::npos; ++at) ++groups;
  EXPECT_EQ(groups, 3u);
  EXPECT_NE(svg.find("data-arm=\"random\""), std::string::npos);
}

TEST(Report, FormatNames) {
  EXPECT_EQ(report_format_from_name("json"), ReportFormat::kJson);
  EXPECT_EQ(report_format_from_name("csv"), ReportFormat::kCsv);
  EXPECT_EQ(report_format_from_name("svg"), ReportFormat::kSvg);
  EXPECT_THROW(report_format_from_name("xml"), Error);
}
