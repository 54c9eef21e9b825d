#include "logicdiff/labeling.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "json.hpp"

namespace logicdiff {
namespace {

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

bool is_split_char(char c) {
  switch (c) {
    case '.': case ',': case '?': case '!': case ':': case ';': case '(': case ')':
    case '"': case '\'': case '$': case '%': case '+': case '-': case '*': case '/':
    case '=': case '[': case ']':
      return true;
    default:
      return false;
  }
}

bool is_operator(std::string_view t) {
  return t == "+" || t == "-" || t == "*" || t == "/" || t == "x" || t == "\xc3\x97";
}

std::string strip_annotations(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, 2, "<<") == 0) {
      const auto close = text.find(">>", i + 2);
      if (close != std::string_view::npos) {
        i = close + 2;
        continue;
      }
    }
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
    ++i;
  }
  return out;
}

bool has_equation(std::span<const std::string> s) {
  for (std::size_t i = 0; i + 4 < s.size(); ++i) {
    if (is_numeric_literal(s[i]) && is_operator(s[i + 1]) && is_numeric_literal(s[i + 2]) &&
        s[i + 3] == "=" && is_numeric_literal(s[i + 4])) {
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<std::string> normalize_tokens(std::string_view raw) {
  const std::string text = strip_annotations(raw);
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const char prev = i > 0 ? text[i - 1] : '\0';
    const char next = i + 1 < text.size() ? text[i + 1] : '\0';
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == ',' && is_digit(prev) && is_digit(next)) {
      // thousands separator
    } else if (c == '.' && is_digit(prev) && is_digit(next) && !cur.empty()) {
      cur += c;
    } else if (c == '-' && is_alpha(prev) && is_alpha(next) && !cur.empty()) {
      cur += c;
    } else if (c == '#') {
      if (!cur.empty() && cur.back() != '#') flush();
      cur += c;
    } else if (is_split_char(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      if (!cur.empty() && cur.back() == '#') flush();
      cur += c;
    }
  }
  flush();
  return out;
}

std::vector<TextSpan> segment_sentences(std::string_view text) {
  std::vector<TextSpan> spans;
  auto is_delim = [&](std::size_t i) {
    const char c = text[i];
    if (c == '!' || c == '?' || c == '\n') return true;
    if (c != '.') return false;
    const bool digit_before = i > 0 && is_digit(text[i - 1]);
    const bool digit_after = i + 1 < text.size() && is_digit(text[i + 1]);
    return !(digit_before && digit_after);
  };
  std::size_t begin = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_delim(i)) {
      ++i;
      continue;
    }
    // A run of delimiters (possibly separated by spaces) closes one span.
    std::size_t end = i + 1;
    while (end < text.size() && (is_delim(end) || text[end] == ' ' || text[end] == '\t')) {
      if (text[end] == ' ' || text[end] == '\t') {
        std::size_t j = end;
        while (j < text.size() && (text[j] == ' ' || text[j] == '\t')) ++j;
        if (j < text.size() && is_delim(j)) {
          end = j;
          continue;
        }
        break;
      }
      ++end;
    }
    spans.push_back({begin, end});
    begin = end;
    i = end;
  }
  if (begin < text.size()) {
    const bool blank = text.find_first_not_of(" \t\r\n", begin) == std::string_view::npos;
    if (blank && !spans.empty()) {
      spans.back().end = text.size();
    } else {
      spans.push_back({begin, text.size()});
    }
  }
  return spans;
}

Role classify_sentence_role(std::span<const std::string> sentence,
                            std::span<const std::string> question, bool is_last) {
  if (is_last || std::find(sentence.begin(), sentence.end(), "####") != sentence.end()) {
    return Role::kConclusion;
  }
  std::set<std::string_view> question_numbers;
  for (const auto& t : question) {
    if (is_numeric_literal(t)) question_numbers.insert(t);
  }
  bool any_number = false;
  bool new_number = false;
  for (const auto& t : sentence) {
    if (!is_numeric_literal(t)) continue;
    any_number = true;
    if (!question_numbers.contains(t)) new_number = true;
  }
  if (has_equation(sentence) || new_number) return Role::kDerived;
  if (any_number) return Role::kPremise;
  return Role::kFiller;
}

bool is_connective_word(std::string_view t) noexcept {
  return t == "so" || t == "therefore" || t == "thus" || t == "because" || t == "since" ||
         t == "then" || t == "hence";
}

bool is_article(std::string_view t) noexcept { return t == "a" || t == "an" || t == "the"; }

bool is_punctuation(std::string_view t) noexcept {
  return t.size() == 1 && is_split_char(t[0]) && !is_operator(t) && t != "=";
}

std::vector<LabeledToken> connective_override(std::vector<LabeledToken> labeled) {
  for (auto& tok : labeled) {
    if (is_connective_word(tok.text)) tok.role = Role::kConnective;
  }
  return labeled;
}

std::vector<LabeledToken> label_solution(std::string_view question, std::string_view solution,
                                         const Vocab& vocab) {
  const auto question_tokens = normalize_tokens(question);
  std::vector<std::vector<std::string>> sentences;
  for (const auto& span : segment_sentences(solution)) {
    auto toks = normalize_tokens(solution.substr(span.begin, span.end - span.begin));
    if (!toks.empty()) sentences.push_back(std::move(toks));
  }
  std::vector<LabeledToken> labeled;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const Role sentence_role =
        classify_sentence_role(sentences[s], question_tokens, s + 1 == sentences.size());
    for (auto& tok : sentences[s]) {
      const auto id = vocab.find(tok);
      const TokenId token_id = id ? *id : vocab.encode(tok);
      const bool unk = !id;
      const Role role =
          (unk || is_punctuation(tok) || is_article(tok)) ? Role::kFiller : sentence_role;
      labeled.push_back({token_id, role, std::move(tok)});
    }
  }
  return connective_override(std::move(labeled));
}

ClassWeightReport compute_class_weights(std::span<const Role> labels) {
  if (labels.empty()) throw Error(ErrorKind::kInvalidInput, "empty label multiset");
  ClassWeightReport report;
  for (Role r : labels) ++report.counts[static_cast<std::size_t>(r)];
  report.total = labels.size();
  for (std::size_t k = 0; k < kNumRoles; ++k) {
    report.distribution[k] =
        static_cast<double>(report.counts[k]) / static_cast<double>(report.total);
  }
  return report;
}

std::string labeled_to_json_line(std::span<const LabeledToken> labeled) {
  std::vector<TokenId> ids;
  std::vector<int> roles;
  for (const auto& t : labeled) {
    ids.push_back(t.token_id);
    roles.push_back(role_id(t.role));
  }
  return nlohmann::json{{"token_ids", ids}, {"roles", roles}}.dump();
}

std::vector<LabeledSequence> read_labeled(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::vector<LabeledSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LabeledSequence seq;
      seq.token_ids = j.at("token_ids").get<std::vector<TokenId>>();
      for (int r : j.at("roles").get<std::vector<int>>()) seq.roles.push_back(role_from_id(r));
      if (seq.roles.size() != seq.token_ids.size()) {
        throw Error(ErrorKind::kInvalidInput, "token_ids and roles differ in length");
      }
      out.push_back(std::move(seq));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kInvalidInput,
                  path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace logicdiff
