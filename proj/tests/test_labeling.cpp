#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "logicdiff/corpus.hpp"
#include "logicdiff/labeling.hpp"

using namespace logicdiff;

namespace {

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
  return out;
}

std::vector<std::string> split(std::string_view s) { return normalize_tokens(s); }

std::string span_text(std::string_view text, TextSpan s) {
  return std::string(text.substr(s.begin, s.end - s.begin));
}

}  // namespace

TEST(Normalize, LowercasesAndSplitsPunctuation) {
  EXPECT_EQ(split("Tom has 3 apples."), (std::vector<std::string>{"tom", "has", "3", "apples", "."}));
  EXPECT_EQ(split("3+2=5"), (std::vector<std::string>{"3", "+", "2", "=", "5"}));
  EXPECT_EQ(split("x = 1.5 miles."), (std::vector<std::string>{"x", "=", "1.5", "miles", "."}));
  EXPECT_EQ(split("1,000 well-known"), (std::vector<std::string>{"1000", "well-known"}));
  EXPECT_EQ(split("gets 2*3 = <<2*3=6>>6 #### 6"),
            (std::vector<std::string>{"gets", "2", "*", "3", "=", "6", "####", "6"}));
}

TEST(Segment, SplitsOnTerminatorsKeepingThem) {
  const std::string t = "a . b .";
  const auto spans = segment_sentences(t);
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(span_text(t, spans[0]), "a .");
  EXPECT_EQ(spans[1].end, t.size());
  EXPECT_EQ(spans[0].end, spans[1].begin);
}

TEST(Segment, UnterminatedTextIsOneSpan) {
  const std::string t = "no full stop here";
  const auto spans = segment_sentences(t);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0], (TextSpan{0, t.size()}));
  EXPECT_TRUE(segment_sentences("").empty());
}

// Hand-built fixture: expected sentence count per line, checked against the
// split rule (terminators '.', '!', '?', newline; decimals do not split).
TEST(Segment, TenSentenceDecimalFixture) {
  struct Case {
    const char* text;
    std::size_t spans;
  };
  const Case cases[] = {
      {"x = 1.5 miles .", 1},
      {"it costs 2.25 dollars . she pays 3.", 2},
      {"wow! really?", 2},
      {"line one\nline two", 2},
      {"a 0.5 b 0.25 c .", 1},
      {"3.5.", 1},
      {"ends with number 4.", 1},
      {"1.2.3 stays together", 1},
      {"what? yes. ok!", 3},
      {".", 1},
  };
  for (const auto& c : cases) {
    const std::string t = c.text;
    const auto spans = segment_sentences(t);
    EXPECT_EQ(spans.size(), c.spans) << t;
    // Contiguous cover.
    std::size_t at = 0;
    for (const auto& s : spans) {
      EXPECT_EQ(s.begin, at) << t;
      at = s.end;
    }
    EXPECT_EQ(at, t.size()) << t;
  }
}

TEST(Classify, RuleExamples) {
  const auto q = split("tom has 3 apples . he buys 2 more . how many ?");
  EXPECT_EQ(classify_sentence_role(split("tom has 3 apples ."), q, false), Role::kPremise);
  EXPECT_EQ(classify_sentence_role(split("the answer is #### 5"), q, false), Role::kConclusion);
  EXPECT_EQ(classify_sentence_role(split("so 3 + 2 = 5 ."), q, false), Role::kDerived);
  EXPECT_EQ(classify_sentence_role(split("so 3 + 2 = 3 ."), q, false), Role::kDerived)
      << "equation pattern wins even when every number is from the question";
  EXPECT_EQ(classify_sentence_role(split("let us think ."), q, false), Role::kFiller);
  EXPECT_EQ(classify_sentence_role(split("let us think ."), q, true), Role::kConclusion);
}

TEST(Override, RelabelsLexiconWordsOnly) {
  std::vector<LabeledToken> in = {{0, Role::kDerived, "so"},
                                  {0, Role::kPremise, "then"},
                                  {0, Role::kPremise, "apples"},
                                  {0, Role::kFiller, "hence"}};
  const auto out = connective_override(in);
  ASSERT_EQ(out.size(), in.size());
  EXPECT_EQ(out[0].role, Role::kConnective);
  EXPECT_EQ(out[1].role, Role::kConnective);
  EXPECT_EQ(out[2].role, Role::kPremise);
  EXPECT_EQ(out[3].role, Role::kConnective);
  EXPECT_EQ(connective_override(out), out);

  const std::vector<LabeledToken> none = {{0, Role::kPremise, "tom"}, {0, Role::kFiller, "."}};
  EXPECT_EQ(connective_override(none), none);
}

TEST(Override, LexiconIsTheSevenWords) {
  for (const char* w : {"so", "therefore", "thus", "because", "since", "then", "hence"}) {
    EXPECT_TRUE(is_connective_word(w)) << w;
  }
  EXPECT_FALSE(is_connective_word("and"));
  EXPECT_FALSE(is_connective_word("So"));
}

TEST(LabelSolution, GoldenInstanceMatchesGoldRoles) {
  const Problem p = read_corpus(std::string(LOGICDIFF_FIXTURES) + "/golden_corpus.jsonl").at(0);
  const auto labeled = label_solution(join(p.question), join(p.solution), Vocab::builtin());
  ASSERT_EQ(labeled.size(), p.solution.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    EXPECT_EQ(labeled[i].role, p.gold_roles[i]) << i << " " << labeled[i].text;
    EXPECT_EQ(labeled[i].text, p.solution[i]);
    EXPECT_EQ(labeled[i].token_id, Vocab::builtin().encode(p.solution[i]));
  }
  EXPECT_TRUE(label_solution("q ?", "", Vocab::builtin()).empty());
}

TEST(LabelSolution, UnknownTokensAreFiller) {
  const auto labeled = label_solution("she has 4 zorbles .", "she has 4 zorbles .", Vocab::builtin());
  ASSERT_EQ(labeled.size(), 5u);
  EXPECT_EQ(labeled[3].role, Role::kFiller);
  EXPECT_EQ(labeled[3].token_id, *Vocab::builtin().unk_id());
  EXPECT_EQ(labeled[2].role, Role::kConclusion) << "single sentence is the last sentence";
}

TEST(LabelSolution, AgreesWithGeneratorOnThousandProblems) {
  CorpusConfig cfg;
  cfg.n_problems = 1000;
  cfg.rng_seed = 99;
  std::size_t total = 0, agree = 0;
  for (const Problem& p : generate_corpus(cfg)) {
    const auto labeled = label_solution(join(p.question), join(p.solution), Vocab::builtin());
    ASSERT_EQ(labeled.size(), p.gold_roles.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) agree += labeled[i].role == p.gold_roles[i];
    total += labeled.size();
  }
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.99);
}

TEST(ClassWeights, FixedWeightsAndEmpiricalDistribution) {
  const std::vector<Role> labels = {Role::kPremise, Role::kDerived, Role::kPremise, Role::kDerived};
  const auto rep = compute_class_weights(labels);
  EXPECT_DOUBLE_EQ(rep.weights[Role::kConnective], 10.0);
  EXPECT_DOUBLE_EQ(rep.weights[Role::kFiller], 0.5);
  EXPECT_DOUBLE_EQ(rep.weights[Role::kPremise], 1.0);
  EXPECT_DOUBLE_EQ(rep.weights[Role::kDerived], 1.0);
  EXPECT_DOUBLE_EQ(rep.weights[Role::kConclusion], 2.0);
  EXPECT_DOUBLE_EQ(rep.distribution[0], 0.5);
  EXPECT_DOUBLE_EQ(rep.distribution[2], 0.5);
  EXPECT_EQ(rep.total, 4u);
  EXPECT_THROW(compute_class_weights(std::vector<Role>{}), Error);
}

TEST(LabeledJsonl, RoundTripThroughFile) {
  const auto labeled = label_solution("tom has 3 apples .", "so 3 + 2 = 5 . #### 5", Vocab::builtin());
  const std::string path = ::testing::TempDir() + "labeled.jsonl";
  {
    std::ofstream out(path);
    out << labeled_to_json_line(labeled) << "\n" << labeled_to_json_line(labeled) << "\n";
  }
  const auto back = read_labeled(path);
  ASSERT_EQ(back.size(), 2u);
  ASSERT_EQ(back[0].roles.size(), labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    EXPECT_EQ(back[0].roles[i], labeled[i].role);
    EXPECT_EQ(back[0].token_ids[i], labeled[i].token_id);
  }
}
