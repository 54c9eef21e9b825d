#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "logicdiff/corpus.hpp"
#include "logicdiff/labeling.hpp"

using namespace logicdiff;

namespace {

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string serialize(const CorpusConfig& cfg) {
  std::ostringstream os;
  write_corpus(os, cfg, generate_corpus(cfg));
  return os.str();
}

const std::string kGolden = std::string(LOGICDIFF_FIXTURES) + "/golden_corpus.jsonl";

}  // namespace

TEST(Corpus, GoldenSeedReproducesRecordedInstance) {
  CorpusConfig cfg;
  cfg.n_problems = 1;
  cfg.steps_min = cfg.steps_max = 1;
  cfg.value_max = 3;
  cfg.rng_seed = 442765;
  EXPECT_EQ(serialize(cfg), read_file(kGolden));

  const auto problems = read_corpus(kGolden);
  ASSERT_EQ(problems.size(), 1u);
  const Problem& p = problems[0];
  EXPECT_EQ(join(p.question), "tom has 3 apples . he buys 2 more . how many ?");
  EXPECT_EQ(join(p.solution), "tom has 3 apples . so 3 + 2 = 5 . the answer is #### 5");
  EXPECT_EQ(p.answer, 5);
  using R = Role;
  const std::vector<Role> roles = {R::kPremise,    R::kPremise,    R::kPremise,    R::kPremise,
                                   R::kFiller,     R::kConnective, R::kDerived,    R::kDerived,
                                   R::kDerived,    R::kDerived,    R::kDerived,    R::kFiller,
                                   R::kFiller,     R::kConclusion, R::kConclusion, R::kConclusion,
                                   R::kConclusion};
  EXPECT_EQ(p.gold_roles, roles);
  ASSERT_EQ(p.branch_spec.size(), 1u);
  EXPECT_EQ(p.branch_spec[0].distractor_op, Op::kSub);
  EXPECT_EQ(p.branch_spec[0].distractor_result, 1);
}

TEST(Corpus, ConstructiveInvariantsHold) {
  CorpusConfig cfg;
  cfg.n_problems = 500;
  cfg.rng_seed = 11;
  const int bound = std::min(99, cfg.value_max * cfg.value_max);
  for (const Problem& p : generate_corpus(cfg)) {
    ASSERT_EQ(p.gold_roles.size(), p.solution.size());
    EXPECT_EQ(evaluate_chain(p), p.answer);
    ASSERT_GE(p.solution.size(), 2u);
    EXPECT_EQ(p.solution[p.solution.size() - 2], "####");
    EXPECT_EQ(p.solution.back(), std::to_string(p.answer));
    const auto steps = static_cast<int>(p.branch_spec.size());
    EXPECT_GE(steps, cfg.steps_min);
    EXPECT_LE(steps, cfg.steps_max);
    for (const auto& b : p.branch_spec) {
      EXPECT_NE(b.result, b.distractor_result);
      EXPECT_NE(b.op, b.distractor_op);
      EXPECT_NE(b.connective, b.distractor_connective);
      for (int v : {b.lhs, b.operand, b.result, b.distractor_result}) {
        EXPECT_GE(v, 0);
        EXPECT_LE(v, bound);
      }
    }
    // Exactly one conclusion span and it closes the solution.
    const auto first = std::find(p.gold_roles.begin(), p.gold_roles.end(), Role::kConclusion);
    ASSERT_NE(first, p.gold_roles.end());
    for (auto it = first; it != p.gold_roles.end(); ++it) {
      EXPECT_TRUE(*it == Role::kConclusion || *it == Role::kFiller);
    }
  }
}

TEST(Corpus, FixedStepCountGivesThatManyConnectives) {
  CorpusConfig cfg;
  cfg.n_problems = 200;
  cfg.steps_min = cfg.steps_max = 3;
  for (const Problem& p : generate_corpus(cfg)) {
    EXPECT_EQ(std::count(p.gold_roles.begin(), p.gold_roles.end(), Role::kConnective), 3);
    std::size_t lexicon_hits = 0;
    for (const auto& t : p.solution) lexicon_hits += is_connective_word(t) ? 1 : 0;
    EXPECT_EQ(lexicon_hits, 3u);
  }
}

TEST(Corpus, DeterministicUnderSeed) {
  CorpusConfig cfg;
  cfg.n_problems = 100;
  cfg.rng_seed = 7;
  EXPECT_EQ(serialize(cfg), serialize(cfg));
  CorpusConfig other = cfg;
  other.rng_seed = 8;
  EXPECT_NE(serialize(cfg), serialize(other));
}

TEST(Corpus, ProblemsDependOnlyOnTheirIndex) {
  CorpusConfig small;
  small.n_problems = 10;
  small.rng_seed = 3;
  CorpusConfig big = small;
  big.n_problems = 50;
  const auto a = generate_corpus(small);
  const auto b = generate_corpus(big);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Corpus, EmptyCorpusStillHasHeader) {
  CorpusConfig cfg;
  cfg.n_problems = 0;
  const std::string text = serialize(cfg);
  EXPECT_NE(text.find("\"format\":\"logicdiff-corpus\""), std::string::npos);
  EXPECT_NE(text.find("\"count\":0"), std::string::npos);
  std::istringstream in(text);
  EXPECT_TRUE(read_corpus(in).empty());
  std::istringstream nothing("");
  EXPECT_THROW(read_corpus(nothing), Error);
}

TEST(Corpus, DerivedIsTheMajorityClass) {
  CorpusConfig cfg;
  cfg.n_problems = 2000;
  cfg.rng_seed = 1;
  std::array<std::size_t, kNumRoles> counts{};
  for (const Problem& p : generate_corpus(cfg)) {
    for (Role r : p.gold_roles) ++counts[static_cast<std::size_t>(r)];
  }
  const auto derived = counts[static_cast<std::size_t>(Role::kDerived)];
  for (std::size_t k = 0; k < kNumRoles; ++k) {
    if (k != static_cast<std::size_t>(Role::kDerived)) EXPECT_GT(derived, counts[k]);
  }
  std::size_t total = 0;
  for (auto c : counts) total += c;
  EXPECT_GT(2 * derived, total * 4 / 5) << "sanity: derived share well above 40%";
}

TEST(Corpus, JsonLineRoundTrip) {
  CorpusConfig cfg;
  cfg.n_problems = 20;
  for (const Problem& p : generate_corpus(cfg)) EXPECT_EQ(problem_from_json_line(problem_to_json_line(p)), p);
}

TEST(Corpus, ConfigValidation) {
  CorpusConfig c;
  c.steps_min = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.steps_max = 1;
  c.steps_min = 2;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.value_max = 0;
  EXPECT_THROW(c.validate(), Error);
  c.value_max = 100;
  EXPECT_THROW(c.validate(), Error);
}

TEST(SlotAnnotation, MarksTrapStructureOfGoldenInstance) {
  const Problem p = read_corpus(kGolden).at(0);
  const auto slots = annotate_slots(p);
  ASSERT_EQ(slots.size(), p.solution.size());
  EXPECT_EQ(slots[5].kind, SlotKind::kConnective);
  EXPECT_EQ(slots[6].kind, SlotKind::kEquationFixed);  // 3
  EXPECT_EQ(slots[7].kind, SlotKind::kOperator);       // +
  EXPECT_EQ(slots[8].kind, SlotKind::kEquationFixed);  // 2
  EXPECT_EQ(slots[9].kind, SlotKind::kEquationFixed);  // =
  EXPECT_EQ(slots[10].kind, SlotKind::kResult);        // 5
  EXPECT_EQ(slots[16].kind, SlotKind::kAnswer);
  EXPECT_EQ(slots[0].kind, SlotKind::kPremise);
}

TEST(Ingest, ValidFileGivesOneRecordPerLine) {
  std::istringstream in(
      R"({"question": "a?", "answer": "x\n#### 1"})" "\n"
      R"({"question": "b?", "answer": "y #### 2"})" "\n"
      R"({"question": "c?", "answer": "z #### 3"})" "\n");
  const auto res = ingest_solutions(in);
  EXPECT_EQ(res.records.size(), 3u);
  EXPECT_TRUE(res.diagnostics.empty());
  EXPECT_EQ(res.records[1].question, "b?");
  EXPECT_EQ(res.records[2].line, 3u);
}

TEST(Ingest, BadLinesBecomeDiagnosticsWithLineNumbers) {
  std::istringstream in(
      R"({"question": "a?", "answer": "#### 1"})" "\n"
      R"({"question": "b?"})" "\n"
      R"({"question": "c?", "answer": "#### 3"})" "\n");
  const auto res = ingest_solutions(in);
  EXPECT_EQ(res.records.size(), 2u);
  ASSERT_EQ(res.diagnostics.size(), 1u);
  EXPECT_NE(res.diagnostics[0].find("line 2"), std::string::npos);
  EXPECT_NE(res.diagnostics[0].find("answer"), std::string::npos);
}

TEST(Ingest, MissingFileIsFatal) {
  try {
    ingest_solutions(std::string("/nonexistent/gsm8k.jsonl"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}
