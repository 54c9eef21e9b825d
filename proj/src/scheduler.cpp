#include "logicdiff/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "logicdiff/rng.hpp"

namespace logicdiff {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Better>
std::vector<Position> select_k(std::span<const ScoredPosition> scores, std::size_t k, Better better) {
  std::vector<ScoredPosition> v(scores.begin(), scores.end());
  const std::size_t m = std::min(k, v.size());
  auto cmp = [&](const ScoredPosition& a, const ScoredPosition& b) {
    if (a.score != b.score) return better(a.score, b.score);
    return a.pos < b.pos;
  };
  if (m < v.size()) std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end(), cmp);
  std::vector<Position> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(v[i].pos);
  std::sort(out.begin(), out.end());
  return out;
}

double unit_draw(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void run_loop(Denoiser& backend, const RoleHeadParams* head, const GenerationConfig& cfg,
              GenerationResult& res) {
  const std::size_t k = tokens_per_step(res.state.gen_len(), cfg.steps);
  const PriorityWeights weights{cfg.w_role, cfg.w_conf};
  std::vector<ScoredPosition> scored;
  std::vector<Role> roles;

  try {
    for (std::size_t step = res.steps_run + 1; step <= cfg.steps; ++step) {
      const std::vector<Position> masked = masked_positions(res.state);
      if (masked.empty()) break;

      auto t0 = Clock::now();
      const DenoiserOutput out = backend.forward(res.state);
      res.timing.backend += seconds_since(t0);
      out.validate(res.state.size());
      if (head != nullptr && out.hidden.cols != head->dim) {
        throw Error(ErrorKind::kShape, "backend hidden rows have " + std::to_string(out.hidden.cols) +
                                           " columns, head expects " + std::to_string(head->dim));
      }

      t0 = Clock::now();
      roles.clear();
      if (cfg.scheduler == SchedulerKind::kLogicDiff) roles = predict_roles(*head, out.hidden, masked);
      res.timing.head += seconds_since(t0);

      t0 = Clock::now();
      scored.clear();
      std::vector<Position> chosen;
      switch (cfg.scheduler) {
        case SchedulerKind::kLogicDiff:
          for (std::size_t i = 0; i < masked.size(); ++i) {
            scored.push_back({masked[i], priority_score(roles[i], out.top_prob[masked[i]], weights)});
          }
          chosen = select_unmask_set(scored, k);
          break;
        case SchedulerKind::kConfidence:
          for (Position p : masked) scored.push_back({p, out.top_prob[p]});
          chosen = baseline_select(scored, k);
          break;
        case SchedulerKind::kRandom: {
          Rng rng = make_rng(cfg.rng_seed, step);
          for (Position p : masked) scored.push_back({p, unit_draw(rng)});
          chosen = select_unmask_set(scored, k);
          break;
        }
      }
      res.timing.select += seconds_since(t0);

      t0 = Clock::now();
      std::vector<Role> chosen_roles;
      if (cfg.scheduler != SchedulerKind::kLogicDiff && head != nullptr) {
        chosen_roles = predict_roles_serial(*head, out.hidden, chosen);
      }
      res.timing.head += seconds_since(t0);

      t0 = Clock::now();
      std::size_t mi = 0;
      for (std::size_t c = 0; c < chosen.size(); ++c) {
        const Position p = chosen[c];
        UnmaskEvent ev{p, step, std::nullopt, out.top_prob[p], out.top_token[p]};
        if (cfg.scheduler == SchedulerKind::kLogicDiff) {
          while (masked[mi] != p) ++mi;
          ev.role = roles[mi];
        } else if (head != nullptr) {
          ev.role = chosen_roles[c];
        }
        res.state.unmask(p, ev.token);
        res.trace.push_back(ev);
      }
      res.timing.select += seconds_since(t0);
      res.steps_run = step;
      ++res.timing.steps;
    }
  } catch (const TransportError& e) {
    res.error = e.what();
    res.resumable = true;
  } catch (const Error& e) {
    res.error = e.what();
    res.resumable = false;
  }
  res.completed = !res.error && masked_positions(res.state).empty();
  if (!res.error && !res.completed) {
    res.error = "step budget exhausted with masks remaining";
  }
}

void check_head(Denoiser& backend, const RoleHeadParams* head, const GenerationConfig& cfg,
                GenerationResult& res) {
  if (cfg.scheduler == SchedulerKind::kLogicDiff && head == nullptr) {
    throw Error(ErrorKind::kInvalidConfig, "the logicdiff scheduler needs a role head");
  }
  if (head == nullptr) return;
  std::size_t d = 0;
  try {
    d = backend.hidden_dim();
  } catch (const TransportError& e) {
    res.error = e.what();
    res.resumable = true;
    return;
  }
  if (d != head->dim) {
    throw Error(ErrorKind::kInvalidConfig, "role head dimension " + std::to_string(head->dim) +
                                               " does not match backend dimension " + std::to_string(d));
  }
}

}  // namespace

void PriorityWeights::validate() const {
  if (!(w_role >= 0.0) || !(w_conf >= 0.0) || !(w_role + w_conf > 0.0)) {
    throw Error(ErrorKind::kInvalidConfig, "weights must be non-negative with a positive sum");
  }
}

double priority_score(Role role, double conf, const PriorityWeights& w) noexcept {
  return w.w_role * (static_cast<double>(role_order(role)) / static_cast<double>(kNumRoles - 1)) +
         w.w_conf * (1.0 - conf);
}

std::vector<Position> select_unmask_set(std::span<const ScoredPosition> scores, std::size_t k) {
  return select_k(scores, k, std::less<double>{});
}

std::vector<Position> baseline_select(std::span<const ScoredPosition> conf, std::size_t k) {
  return select_k(conf, k, std::greater<double>{});
}

GenerationResult generate(Denoiser& backend, const RoleHeadParams* head,
                          std::span<const TokenId> prompt, const GenerationConfig& cfg,
                          TokenId mask_id) {
  cfg.validate();
  GenerationResult res{SequenceState::initial(prompt, cfg.gen_len, mask_id), {}, 0, false, {}, false, {}};
  check_head(backend, head, cfg, res);
  if (res.error) return res;
  run_loop(backend, head, cfg, res);
  return res;
}

GenerationResult resume(Denoiser& backend, const RoleHeadParams* head, GenerationResult partial,
                        const GenerationConfig& cfg) {
  cfg.validate();
  if (partial.state.gen_len() != cfg.gen_len) {
    throw Error(ErrorKind::kInvalidConfig, "resumed state does not match gen_len");
  }
  partial.error.reset();
  partial.resumable = false;
  check_head(backend, head, cfg, partial);
  if (partial.error) return partial;
  run_loop(backend, head, cfg, partial);
  return partial;
}

bool strict_role_phases(std::span<const UnmaskEvent> trace) {
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::array<std::size_t, kNumRoles> lo;
  std::array<std::size_t, kNumRoles> hi;
  lo.fill(kNone);
  hi.fill(0);
  for (const auto& ev : trace) {
    if (!ev.role || *ev.role == Role::kFiller) continue;
    const auto r = static_cast<std::size_t>(*ev.role);
    lo[r] = std::min(lo[r], ev.step);
    hi[r] = std::max(hi[r], ev.step);
  }
  std::size_t prev_max = 0;
  for (std::size_t r = 0; r < kNumRoles; ++r) {
    if (lo[r] == kNone) continue;
    if (lo[r] < prev_max) return false;
    prev_max = hi[r];
  }
  return true;
}

void write_trace(std::span<const UnmaskEvent> trace, std::ostream& out) {
  for (const auto& ev : trace) {
    nlohmann::json j;
    j["pos"] = ev.pos;
    j["step"] = ev.step;
    j["role"] = ev.role ? nlohmann::json(role_id(*ev.role)) : nlohmann::json(nullptr);
    j["conf"] = ev.conf;
    j["token"] = ev.token;
    out << j.dump() << '\n';
  }
}

void write_trace(std::span<const UnmaskEvent> trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  write_trace(trace, out);
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path);
}

UnmaskTrace read_trace(std::istream& in) {
  UnmaskTrace trace;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UnmaskEvent ev;
      ev.pos = j.at("pos").get<Position>();
      ev.step = j.at("step").get<std::size_t>();
      if (!j.at("role").is_null()) ev.role = role_from_id(j.at("role").get<int>());
      ev.conf = j.at("conf").get<double>();
      ev.token = j.at("token").get<TokenId>();
      trace.push_back(ev);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kInvalidInput, "trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trace;
}

}  // namespace logicdiff
