#include "logicdiff/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace logicdiff {
namespace {

using nlohmann::json;

struct Person {
  const char* name;
  const char* pronoun;
};

constexpr std::array<Person, 12> kPeople = {{{"tom", "he"}, {"ann", "she"}, {"bob", "he"},
                                             {"sue", "she"}, {"max", "he"}, {"eva", "she"},
                                             {"sam", "he"}, {"lily", "she"}, {"joe", "he"},
                                             {"kim", "she"}, {"ned", "he"}, {"ivy", "she"}}};

constexpr std::array<const char*, 12> kItems = {"apples", "pens",    "books",   "coins",
                                                "cards",  "cups",    "eggs",    "stamps",
                                                "marbles", "shells", "stickers", "cookies"};

// Verb phrase between the name and the premise value.
constexpr std::array<const char*, 6> kPremiseVerbs = {"has",          "owns",     "keeps",
                                                      "starts with",  "collects", "picks"};

constexpr std::array<const char*, 4> kConnectives = {"so", "therefore", "then", "thus"};

constexpr std::array<Op, 3> kOps = {Op::kAdd, Op::kSub, Op::kMul};

int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

template <typename C>
const auto& pick(Rng& rng, const C& items) {
  return items[static_cast<std::size_t>(uniform(rng, 0, static_cast<int>(items.size()) - 1))];
}

void push_words(std::vector<std::string>& out, std::vector<Role>* roles, std::string_view words,
                Role role) {
  std::istringstream in{std::string(words)};
  std::string w;
  while (in >> w) {
    out.push_back(w);
    if (roles) roles->push_back(role);
  }
}

void push(std::vector<std::string>& out, std::vector<Role>* roles, std::string token, Role role) {
  out.push_back(std::move(token));
  if (roles) roles->push_back(role);
}

void append_question_step(std::vector<std::string>& q, Rng& rng, const char* pronoun, Op op,
                          int operand) {
  const std::string b = std::to_string(operand);
  const bool alt = uniform(rng, 0, 1) == 1;
  std::string sentence = pronoun;
  switch (op) {
    case Op::kAdd: sentence += (alt ? " finds " : " buys ") + b + " more ."; break;
    case Op::kSub: sentence += (alt ? " loses " : " gives away ") + b + " ."; break;
    case Op::kMul: sentence += " gets " + b + " times as many ."; break;
  }
  push_words(q, nullptr, sentence, Role::kFiller);
}

bool draw_step(Rng& rng, int lhs, int value_max, int bound, BranchStep& step) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const Op op = pick(rng, kOps);
    const int b_min = (op == Op::kMul && value_max >= 2) ? 2 : 1;
    const int b = uniform(rng, b_min, value_max);
    const int r = apply_op(op, lhs, b);
    if (r < 0 || r > bound) continue;
    Op alternatives[2];
    int n = 0;
    for (Op o : kOps) {
      if (o != op) alternatives[n++] = o;
    }
    const Op dop = alternatives[uniform(rng, 0, 1)];
    const int d = apply_op(dop, lhs, b);
    if (d < 0 || d > bound || d == r) continue;
    step.lhs = lhs;
    step.operand = b;
    step.op = op;
    step.result = r;
    step.distractor_op = dop;
    step.distractor_result = d;
    return true;
  }
  return false;
}

json step_to_json(const BranchStep& s) {
  return json{{"lhs", s.lhs},
              {"operand", s.operand},
              {"op", op_token(s.op)},
              {"result", s.result},
              {"distractor_op", op_token(s.distractor_op)},
              {"distractor_result", s.distractor_result},
              {"connective", s.connective},
              {"distractor_connective", s.distractor_connective}};
}

BranchStep step_from_json(const json& j) {
  BranchStep s;
  s.lhs = j.at("lhs").get<int>();
  s.operand = j.at("operand").get<int>();
  s.op = op_from_token(j.at("op").get<std::string>());
  s.result = j.at("result").get<int>();
  s.distractor_op = op_from_token(j.at("distractor_op").get<std::string>());
  s.distractor_result = j.at("distractor_result").get<int>();
  s.connective = j.at("connective").get<std::string>();
  s.distractor_connective = j.at("distractor_connective").get<std::string>();
  return s;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  push_words(out, nullptr, text, Role::kFiller);
  return out;
}

json config_to_json(const CorpusConfig& cfg) {
  return json{{"n_problems", cfg.n_problems},
              {"steps_min", cfg.steps_min},
              {"steps_max", cfg.steps_max},
              {"value_max", cfg.value_max},
              {"rng_seed", cfg.rng_seed}};
}

}  // namespace

int apply_op(Op op, int lhs, int rhs) noexcept {
  switch (op) {
    case Op::kAdd: return lhs + rhs;
    case Op::kSub: return lhs - rhs;
    case Op::kMul: return lhs * rhs;
  }
  return 0;
}

std::string op_token(Op op) { return std::string(1, static_cast<char>(op)); }

Op op_from_token(std::string_view token) {
  if (token == "+") return Op::kAdd;
  if (token == "-") return Op::kSub;
  if (token == "*") return Op::kMul;
  throw Error(ErrorKind::kInvalidInput, "unknown operator '" + std::string(token) + "'");
}

int evaluate_chain(const Problem& problem) {
  int v = problem.premise_value;
  for (const auto& s : problem.branch_spec) v = apply_op(s.op, v, s.operand);
  return v;
}

void CorpusConfig::validate() const {
  if (steps_min < 1 || steps_max < steps_min) {
    throw Error(ErrorKind::kInvalidConfig, "need 1 <= steps_min <= steps_max");
  }
  if (value_max < 1 || value_max > 99) {
    throw Error(ErrorKind::kInvalidConfig, "value_max must be in [1, 99]");
  }
}

Problem generate_problem(const CorpusConfig& cfg, Rng& rng) {
  cfg.validate();
  const int bound = std::min(99, cfg.value_max * cfg.value_max);
  for (int restart = 0; restart < 10000; ++restart) {
    const Person& person = pick(rng, kPeople);
    const char* item = pick(rng, kItems);
    const char* verb = pick(rng, kPremiseVerbs);
    const int a = uniform(rng, 1, std::min(cfg.value_max, bound));
    const int n_steps = uniform(rng, cfg.steps_min, cfg.steps_max);

    Problem p;
    p.premise_value = a;
    int v = a;
    bool ok = true;
    for (int s = 0; s < n_steps && ok; ++s) {
      BranchStep step;
      ok = draw_step(rng, v, cfg.value_max, bound, step);
      if (!ok) break;
      step.connective = pick(rng, kConnectives);
      do {
        step.distractor_connective = pick(rng, kConnectives);
      } while (step.distractor_connective == step.connective);
      v = step.result;
      p.branch_spec.push_back(std::move(step));
    }
    if (!ok) continue;
    p.answer = v;

    const std::string premise =
        std::string(person.name) + " " + verb + " " + std::to_string(a) + " " + item;

    push_words(p.question, nullptr, premise + " .", Role::kFiller);
    for (const auto& step : p.branch_spec) {
      append_question_step(p.question, rng, person.pronoun, step.op, step.operand);
    }
    push_words(p.question, nullptr, "how many ?", Role::kFiller);

    auto* roles = &p.gold_roles;
    push_words(p.solution, roles, premise, Role::kPremise);
    push(p.solution, roles, ".", Role::kFiller);
    for (const auto& step : p.branch_spec) {
      push(p.solution, roles, step.connective, Role::kConnective);
      push(p.solution, roles, std::to_string(step.lhs), Role::kDerived);
      push(p.solution, roles, op_token(step.op), Role::kDerived);
      push(p.solution, roles, std::to_string(step.operand), Role::kDerived);
      push(p.solution, roles, "=", Role::kDerived);
      push(p.solution, roles, std::to_string(step.result), Role::kDerived);
      push(p.solution, roles, ".", Role::kFiller);
    }
    push(p.solution, roles, "the", Role::kFiller);
    if (uniform(rng, 0, 1) == 1) push(p.solution, roles, "final", Role::kConclusion);
    push_words(p.solution, roles, "answer is ####", Role::kConclusion);
    push(p.solution, roles, std::to_string(p.answer), Role::kConclusion);
    return p;
  }
  throw Error(ErrorKind::kInvalidConfig, "corpus config admits no valid problems");
}

std::vector<Problem> generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  std::vector<Problem> out(cfg.n_problems);
  const auto n = static_cast<std::int64_t>(cfg.n_problems);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng = make_rng(cfg.rng_seed, static_cast<std::uint64_t>(i));
    out[static_cast<std::size_t>(i)] = generate_problem(cfg, rng);
  }
  return out;
}

std::vector<Slot> annotate_slots(const Problem& problem) {
  const auto& sol = problem.solution;
  if (sol.size() != problem.gold_roles.size()) {
    throw Error(ErrorKind::kInvalidInput, "solution and gold_roles differ in length");
  }
  std::vector<Slot> slots(sol.size());
  int step = -1;
  for (std::size_t i = 0; i < sol.size(); ++i) {
    const Role role = problem.gold_roles[i];
    Slot& slot = slots[i];
    switch (role) {
      case Role::kPremise: slot.kind = SlotKind::kPremise; break;
      case Role::kFiller: slot.kind = SlotKind::kFiller; break;
      case Role::kConclusion:
        slot.kind = (i > 0 && sol[i - 1] == "####") ? SlotKind::kAnswer : SlotKind::kConclusionWord;
        break;
      case Role::kConnective: {
        ++step;
        if (step >= static_cast<int>(problem.branch_spec.size()) || i + 6 > sol.size()) {
          throw Error(ErrorKind::kInvalidInput, "connective without a matching branch step");
        }
        slot = {SlotKind::kConnective, step};
        constexpr SlotKind kEquation[5] = {SlotKind::kEquationFixed, SlotKind::kOperator,
                                           SlotKind::kEquationFixed, SlotKind::kEquationFixed,
                                           SlotKind::kResult};
        for (std::size_t k = 0; k < 5; ++k) {
          if (problem.gold_roles[i + 1 + k] != Role::kDerived) {
            throw Error(ErrorKind::kInvalidInput, "equation slot without DERIVED role");
          }
          slots[i + 1 + k] = {kEquation[k], step};
        }
        i += 5;
        break;
      }
      case Role::kDerived:
        throw Error(ErrorKind::kInvalidInput, "DERIVED token outside an equation");
    }
  }
  if (step + 1 != static_cast<int>(problem.branch_spec.size())) {
    throw Error(ErrorKind::kInvalidInput, "branch_spec step count does not match the solution");
  }
  return slots;
}

std::string problem_to_json_line(const Problem& p) {
  json steps = json::array();
  for (const auto& s : p.branch_spec) steps.push_back(step_to_json(s));
  std::vector<int> roles;
  roles.reserve(p.gold_roles.size());
  for (Role r : p.gold_roles) roles.push_back(role_id(r));
  json j{{"question", join(p.question)},
         {"solution", join(p.solution)},
         {"answer", p.answer},
         {"roles", roles},
         {"branch_spec", json{{"premise_value", p.premise_value}, {"steps", steps}}}};
  return j.dump();
}

Problem problem_from_json_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    Problem p;
    p.question = split(j.at("question").get<std::string>());
    p.solution = split(j.at("solution").get<std::string>());
    p.answer = j.at("answer").get<int>();
    for (int r : j.at("roles").get<std::vector<int>>()) p.gold_roles.push_back(role_from_id(r));
    const json& spec = j.at("branch_spec");
    p.premise_value = spec.at("premise_value").get<int>();
    for (const auto& s : spec.at("steps")) p.branch_spec.push_back(step_from_json(s));
    if (p.gold_roles.size() != p.solution.size()) {
      throw Error(ErrorKind::kInvalidInput, "roles and solution differ in length");
    }
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("corpus record: ") + e.what());
  }
}

void write_corpus(std::ostream& out, const CorpusConfig& cfg, const std::vector<Problem>& problems) {
  json header{{"format", "logicdiff-corpus"}, {"version", 1}, {"config", config_to_json(cfg)},
              {"count", problems.size()}};
  out << header.dump() << '\n';
  for (const auto& p : problems) out << problem_to_json_line(p) << '\n';
}

void write_corpus(const std::string& path, const CorpusConfig& cfg,
                  const std::vector<Problem>& problems) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  write_corpus(out, cfg, problems);
}

std::vector<Problem> read_corpus(std::istream& in) {
  std::vector<Problem> out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      json header;
      try {
        header = json::parse(line);
      } catch (const json::exception& e) {
        throw Error(ErrorKind::kInvalidInput, std::string("corpus header: ") + e.what());
      }
      if (header.value("format", "") != "logicdiff-corpus") {
        throw Error(ErrorKind::kInvalidInput, "missing corpus header");
      }
      continue;
    }
    out.push_back(problem_from_json_line(line));
  }
  if (!header_seen) throw Error(ErrorKind::kInvalidInput, "empty corpus file (no header)");
  return out;
}

std::vector<Problem> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return read_corpus(in);
}

IngestResult ingest_solutions(std::istream& in) {
  IngestResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      result.diagnostics.push_back(where + "not valid JSON");
      continue;
    }
    if (!j.is_object()) {
      result.diagnostics.push_back(where + "not a JSON object");
      continue;
    }
    bool ok = true;
    for (const char* field : {"question", "answer"}) {
      if (!j.contains(field) || !j[field].is_string()) {
        result.diagnostics.push_back(where + "missing string field \"" + field + "\"");
        ok = false;
      }
    }
    if (!ok) continue;
    std::string answer = j["answer"].get<std::string>();
    if (answer.find("####") == std::string::npos) {
      result.diagnostics.push_back(where + "answer has no \"####\" marker");
      continue;
    }
    result.records.push_back({line_no, j["question"].get<std::string>(), std::move(answer)});
  }
  return result;
}

IngestResult ingest_solutions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return ingest_solutions(in);
}

}  // namespace logicdiff
