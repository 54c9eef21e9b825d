#include "logicdiff/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>

#include "logicdiff/rng.hpp"

namespace logicdiff {
namespace {

using nlohmann::json;

std::optional<std::int64_t> parse_int(std::string_view t) {
  if (t.empty()) return std::nullopt;
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

double median_of(std::vector<std::size_t>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? static_cast<double>(v[n / 2])
                    : 0.5 * (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2]));
}

std::vector<std::string> arm_names(std::span<const SchedulerKind> arms) {
  std::vector<std::string> names;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    const std::string base = scheduler_name(arms[a]);
    std::size_t dup = 1;
    for (std::size_t b = 0; b < a; ++b) dup += arms[b] == arms[a] ? 1 : 0;
    names.push_back(dup == 1 ? base : base + "_" + std::to_string(dup));
  }
  return names;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_double(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json trap_json(const std::optional<TrapConfig>& t) {
  if (!t) return nullptr;
  return {{"beta", t->beta},
          {"conn_entropy_split", t->conn_entropy_split},
          {"noise_sigma", t->noise_sigma},
          {"hidden_dim", t->hidden_dim}};
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string csv_value(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

struct Outcome {
  ProblemRecord record;
  UnmaskTrace trace;
  LoopTiming timing;
};

}  // namespace

std::optional<std::int64_t> extract_answer(std::span<const std::string> tokens) {
  for (std::size_t i = tokens.size(); i-- > 0;) {
    if (tokens[i] != "####") continue;
    if (i + 1 == tokens.size()) return std::nullopt;
    return parse_int(tokens[i + 1]);
  }
  return std::nullopt;
}

std::optional<std::int64_t> extract_answer(std::span<const TokenId> ids, const Vocab& vocab) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (TokenId id : ids) tokens.push_back(vocab.valid(id) ? vocab.decode(id) : std::string());
  return extract_answer(tokens);
}

RoleStepStats role_step_stats(std::span<const UnmaskTrace> traces) {
  std::array<std::vector<std::size_t>, kNumRoles> steps;
  for (const auto& trace : traces) {
    for (const auto& ev : trace) {
      if (ev.role) steps[static_cast<std::size_t>(*ev.role)].push_back(ev.step);
    }
  }
  RoleStepStats out{};
  for (std::size_t r = 0; r < kNumRoles; ++r) {
    if (steps[r].empty()) continue;
    double sum = 0.0;
    for (std::size_t s : steps[r]) sum += static_cast<double>(s);
    RoleStepStat st;
    st.count = steps[r].size();
    st.mean = sum / static_cast<double>(st.count);
    st.median = median_of(steps[r]);
    out[r] = st;
  }
  return out;
}

void EvalConfig::validate() const {
  if (arms.empty()) throw Error(ErrorKind::kInvalidConfig, "at least one arm is required");
  GenerationConfig g = generation;
  for (SchedulerKind k : arms) {
    g.scheduler = k;
    g.validate();
  }
}

BackendFactory synthetic_factory(const Vocab& vocab, TrapConfig trap) {
  trap.validate();
  return [&vocab, trap](std::size_t, const Problem& p) -> std::unique_ptr<Denoiser> {
    return std::make_unique<SyntheticBackend>(p, vocab, trap);
  };
}

EvalReport evaluate(std::span<const Problem> problems, const Vocab& vocab, const EvalConfig& cfg,
                    const BackendFactory& factory, const RoleHeadParams* head) {
  cfg.validate();
  if (problems.empty()) throw Error(ErrorKind::kInvalidInput, "empty corpus");
  for (SchedulerKind k : cfg.arms) {
    if (k == SchedulerKind::kLogicDiff && head == nullptr) {
      throw Error(ErrorKind::kInvalidConfig, "the logicdiff arm needs a role head");
    }
  }
  const std::size_t n = problems.size();
  const std::size_t n_arms = cfg.arms.size();
  const auto names = arm_names(cfg.arms);
  std::vector<Outcome> outcomes(n * n_arms);
  std::exception_ptr failure;

  auto run_problem = [&](std::size_t i) {
    const Problem& problem = problems[i];
    const std::vector<TokenId> prompt = vocab.encode_all(problem.question);
    std::unique_ptr<Denoiser> backend = factory(i, problem);
    for (std::size_t j = 0; j < n_arms; ++j) {
      const std::size_t a = (i + j) % n_arms;
      GenerationConfig g = cfg.generation;
      g.scheduler = cfg.arms[a];
      g.rng_seed = substream_seed(cfg.seed, i);
      const auto t0 = std::chrono::steady_clock::now();
      GenerationResult res = generate(*backend, head, prompt, g, vocab.mask_id());
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      Outcome& o = outcomes[i * n_arms + a];
      ProblemRecord& rec = o.record;
      rec.index = i;
      rec.arm = names[a];
      rec.gold = problem.answer;
      rec.steps = res.steps_run;
      rec.seconds = secs;
      rec.errored = res.error.has_value();
      if (rec.errored) rec.error = *res.error;
      rec.predicted = extract_answer(res.state.window(), vocab);
      rec.correct = !rec.errored && rec.predicted && *rec.predicted == rec.gold;
      const bool annotated =
          !res.trace.empty() && std::all_of(res.trace.begin(), res.trace.end(),
                                            [](const UnmaskEvent& e) { return e.role.has_value(); });
      if (!rec.errored && annotated) rec.strict_phases = strict_role_phases(res.trace);
      o.trace = std::move(res.trace);
      o.timing = res.timing;
    }
  };

  if (cfg.parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
      try {
        run_problem(i);
      } catch (...) {
#pragma omp critical(logicdiff_eval_failure)
        if (!failure) failure = std::current_exception();
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) run_problem(i);
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport report;
  report.config = cfg;
  report.n_problems = n;
  report.records.reserve(outcomes.size());
  for (const auto& o : outcomes) report.records.push_back(o.record);
  if (cfg.keep_traces) report.traces.assign(n_arms, {});

  for (std::size_t a = 0; a < n_arms; ++a) {
    ArmReport arm;
    arm.name = names[a];
    arm.scheduler = cfg.arms[a];
    std::vector<UnmaskTrace> traces;
    std::size_t annotated = 0, strict = 0;
    double secs = 0.0, backend = 0.0, head_step = 0.0, select_step = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Outcome& o = outcomes[i * n_arms + a];
      ++arm.n_total;
      arm.n_correct += o.record.correct ? 1 : 0;
      arm.n_errored += o.record.errored ? 1 : 0;
      if (o.record.strict_phases) {
        ++annotated;
        strict += *o.record.strict_phases ? 1 : 0;
      }
      if (!o.record.errored) traces.push_back(o.trace);
      if (i >= cfg.warmup && !o.record.errored) {
        ++arm.timing.timed;
        secs += o.record.seconds;
        backend += o.timing.backend;
        if (o.timing.steps > 0) {
          head_step += o.timing.head / static_cast<double>(o.timing.steps);
          select_step += o.timing.select / static_cast<double>(o.timing.steps);
        }
      }
      if (cfg.keep_traces) report.traces[a].push_back(o.trace);
    }
    arm.accuracy = static_cast<double>(arm.n_correct) / static_cast<double>(arm.n_total);
    if (annotated > 0) arm.strict_phase_fraction = static_cast<double>(strict) / static_cast<double>(annotated);
    arm.role_steps = role_step_stats(traces);
    if (arm.timing.timed > 0) {
      const auto t = static_cast<double>(arm.timing.timed);
      arm.timing.mean_seconds = secs / t;
      arm.timing.mean_backend_seconds = backend / t;
      arm.timing.mean_head_per_step = head_step / t;
      arm.timing.mean_select_per_step = select_step / t;
    }
    report.arms.push_back(std::move(arm));
  }

  const auto base = std::find_if(report.arms.begin(), report.arms.end(), [](const ArmReport& r) {
    return r.scheduler == SchedulerKind::kConfidence;
  });
  if (base != report.arms.end() && base->timing.timed > 0) {
    const ArmTiming ref = base->timing;
    for (auto& arm : report.arms) {
      if (arm.timing.timed == 0) continue;
      if (ref.mean_seconds > 0.0) arm.timing.overhead_ratio = arm.timing.mean_seconds / ref.mean_seconds;
      if (ref.mean_select_per_step > 0.0) {
        arm.timing.scoring_ratio = arm.timing.mean_select_per_step / ref.mean_select_per_step;
      }
    }
  }
  return report;
}

json report_to_json(const EvalReport& report) {
  const EvalConfig& c = report.config;
  json cfg = {{"steps", c.generation.steps},
              {"gen_len", c.generation.gen_len},
              {"w_role", c.generation.w_role},
              {"w_conf", c.generation.w_conf},
              {"seed", c.seed},
              {"warmup", c.warmup},
              {"backend", c.backend},
              {"trap", trap_json(c.trap)}};
  json arms_in = json::array();
  for (SchedulerKind k : c.arms) arms_in.push_back(scheduler_name(k));
  cfg["arms"] = std::move(arms_in);

  json arms = json::array();
  for (const auto& a : report.arms) {
    json roles = json::object();
    for (Role r : kAllRoles) {
      const auto& st = a.role_steps[static_cast<std::size_t>(r)];
      roles[role_name(r)] = st ? json{{"mean", st->mean}, {"median", st->median}, {"count", st->count}}
                               : json(nullptr);
    }
    arms.push_back({{"name", a.name},
                    {"scheduler", scheduler_name(a.scheduler)},
                    {"n_total", a.n_total},
                    {"n_correct", a.n_correct},
                    {"n_errored", a.n_errored},
                    {"accuracy", a.accuracy},
                    {"strict_phase_fraction", optional_json(a.strict_phase_fraction)},
                    {"role_steps", std::move(roles)},
                    {"timing",
                     {{"mean_seconds", a.timing.mean_seconds},
                      {"mean_backend_seconds", a.timing.mean_backend_seconds},
                      {"mean_head_per_step", a.timing.mean_head_per_step},
                      {"mean_select_per_step", a.timing.mean_select_per_step},
                      {"timed", a.timing.timed},
                      {"overhead_ratio", optional_json(a.timing.overhead_ratio)},
                      {"scoring_ratio", optional_json(a.timing.scoring_ratio)}}}});
  }

  json problems = json::array();
  for (const auto& r : report.records) {
    problems.push_back({{"index", r.index},
                        {"arm", r.arm},
                        {"gold", r.gold},
                        {"predicted", r.predicted ? json(*r.predicted) : json(nullptr)},
                        {"correct", r.correct},
                        {"errored", r.errored},
                        {"error", r.error},
                        {"steps", r.steps},
                        {"strict_phases", r.strict_phases ? json(*r.strict_phases) : json(nullptr)},
                        {"timing", {{"seconds", r.seconds}}}});
  }
  return {{"format", "logicdiff-eval"},
          {"version", 1},
          {"config", std::move(cfg)},
          {"n_problems", report.n_problems},
          {"arms", std::move(arms)},
          {"problems", std::move(problems)}};
}

EvalReport report_from_json(const json& j) {
  try {
    if (j.at("format") != "logicdiff-eval") throw Error(ErrorKind::kInvalidInput, "not an eval report");
    if (j.at("version") != 1) throw Error(ErrorKind::kInvalidInput, "unsupported report version");
    EvalReport rep;
    const json& c = j.at("config");
    rep.config.generation.steps = c.at("steps").get<std::size_t>();
    rep.config.generation.gen_len = c.at("gen_len").get<std::size_t>();
    rep.config.generation.w_role = c.at("w_role").get<double>();
    rep.config.generation.w_conf = c.at("w_conf").get<double>();
    rep.config.seed = c.at("seed").get<std::uint64_t>();
    rep.config.warmup = c.at("warmup").get<std::size_t>();
    rep.config.backend = c.at("backend").get<std::string>();
    if (!c.at("trap").is_null()) {
      const json& t = c.at("trap");
      rep.config.trap = TrapConfig{t.at("beta").get<double>(), t.at("conn_entropy_split").get<double>(),
                                   t.at("noise_sigma").get<double>(), t.at("hidden_dim").get<std::size_t>()};
    }
    rep.config.arms.clear();
    for (const auto& a : c.at("arms")) rep.config.arms.push_back(scheduler_from_name(a.get<std::string>()));
    rep.n_problems = j.at("n_problems").get<std::size_t>();

    for (const auto& a : j.at("arms")) {
      ArmReport arm;
      arm.name = a.at("name").get<std::string>();
      arm.scheduler = scheduler_from_name(a.at("scheduler").get<std::string>());
      arm.n_total = a.at("n_total").get<std::size_t>();
      arm.n_correct = a.at("n_correct").get<std::size_t>();
      arm.n_errored = a.at("n_errored").get<std::size_t>();
      arm.accuracy = a.at("accuracy").get<double>();
      arm.strict_phase_fraction = optional_double(a.at("strict_phase_fraction"));
      for (Role r : kAllRoles) {
        const json& st = a.at("role_steps").at(role_name(r));
        if (st.is_null()) continue;
        arm.role_steps[static_cast<std::size_t>(r)] =
            RoleStepStat{st.at("mean").get<double>(), st.at("median").get<double>(),
                         st.at("count").get<std::size_t>()};
      }
      if (const auto it = a.find("timing"); it != a.end()) {
        arm.timing.mean_seconds = it->at("mean_seconds").get<double>();
        arm.timing.mean_backend_seconds = it->at("mean_backend_seconds").get<double>();
        arm.timing.mean_head_per_step = it->at("mean_head_per_step").get<double>();
        arm.timing.mean_select_per_step = it->at("mean_select_per_step").get<double>();
        arm.timing.timed = it->at("timed").get<std::size_t>();
        arm.timing.overhead_ratio = optional_double(it->at("overhead_ratio"));
        arm.timing.scoring_ratio = optional_double(it->at("scoring_ratio"));
      }
      rep.arms.push_back(std::move(arm));
    }
    for (const auto& p : j.at("problems")) {
      ProblemRecord r;
      r.index = p.at("index").get<std::size_t>();
      r.arm = p.at("arm").get<std::string>();
      r.gold = p.at("gold").get<std::int64_t>();
      if (!p.at("predicted").is_null()) r.predicted = p.at("predicted").get<std::int64_t>();
      r.correct = p.at("correct").get<bool>();
      r.errored = p.at("errored").get<bool>();
      r.error = p.at("error").get<std::string>();
      r.steps = p.at("steps").get<std::size_t>();
      if (!p.at("strict_phases").is_null()) r.strict_phases = p.at("strict_phases").get<bool>();
      if (const auto it = p.find("timing"); it != p.end()) r.seconds = it->at("seconds").get<double>();
      rep.records.push_back(std::move(r));
    }
    return rep;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("eval report: ") + e.what());
  }
}

json mask_timing(json j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto& [key, value] : j.items()) value = mask_timing(std::move(value));
  } else if (j.is_array()) {
    for (auto& value : j) value = mask_timing(std::move(value));
  }
  return j;
}

ReportFormat report_format_from_name(std::string_view name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "svg") return ReportFormat::kSvg;
  throw Error(ErrorKind::kInvalidConfig, "unknown report format '" + std::string(name) + "'");
}

std::string render_report(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::kJson:
      return report_to_json(report).dump(2) + "\n";
    case ReportFormat::kCsv: {
      std::ostringstream os;
      os << "arm,metric,value\n";
      for (const auto& a : report.arms) {
        std::array<std::optional<double>, kCsvMetrics.size()> v{};
        v[0] = a.accuracy;
        v[1] = static_cast<double>(a.n_total);
        v[2] = static_cast<double>(a.n_correct);
        v[3] = static_cast<double>(a.n_errored);
        v[4] = a.strict_phase_fraction;
        for (std::size_t r = 0; r < kNumRoles; ++r) {
          if (a.role_steps[r]) v[5 + r] = a.role_steps[r]->mean;
        }
        v[10] = a.timing.mean_seconds;
        v[11] = a.timing.overhead_ratio;
        v[12] = a.timing.scoring_ratio;
        for (std::size_t m = 0; m < kCsvMetrics.size(); ++m) {
          os << a.name << ',' << kCsvMetrics[m] << ',' << csv_value(v[m]) << '\n';
        }
      }
      return os.str();
    }
    case ReportFormat::kSvg: {
      constexpr int kBarWidth = 60, kGap = 40, kHeight = 200, kTop = 30, kLeft = 50;
      const int width = kLeft + static_cast<int>(report.arms.size()) * (kBarWidth + kGap) + kGap;
      std::ostringstream os;
      os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
         << kHeight + kTop + 50 << "\">\n"
         << "  <text x=\"" << kLeft << "\" y=\"20\" font-size=\"14\">exact-match accuracy</text>\n"
         << "  <line x1=\"" << kLeft << "\" y1=\"" << kTop + kHeight << "\" x2=\"" << width - 10
         << "\" y2=\"" << kTop + kHeight << "\" stroke=\"black\"/>\n";
      for (std::size_t i = 0; i < report.arms.size(); ++i) {
        const auto& a = report.arms[i];
        const int x = kLeft + kGap + static_cast<int>(i) * (kBarWidth + kGap);
        const int h = static_cast<int>(std::lround(a.accuracy * kHeight));
        os << "  <g class=\"arm\" data-arm=\"" << xml_escape(a.name) << "\">\n"
           << "    <rect x=\"" << x << "\" y=\"" << kTop + kHeight - h << "\" width=\"" << kBarWidth
           << "\" height=\"" << h << "\" fill=\"" << (i % 2 == 0 ? "#4c72b0" : "#dd8452") << "\"/>\n"
           << "    <text x=\"" << x << "\" y=\"" << kTop + kHeight + 18 << "\" font-size=\"12\">"
           << xml_escape(a.name) << "</text>\n"
           << "    <text x=\"" << x << "\" y=\"" << kTop + kHeight - h - 4 << "\" font-size=\"12\">"
           << std::lround(a.accuracy * 1000.0) / 10.0 << "%</text>\n"
           << "  </g>\n";
      }
      os << "</svg>\n";
      return os.str();
    }
  }
  return {};
}

void emit_report(const EvalReport& report, const std::string& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << render_report(report, format);
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path);
}

}  // namespace logicdiff
