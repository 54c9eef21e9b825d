// One PASS/FAIL line per acceptance criterion; exit status is the number of
// failures. Thresholds are fixed and never adjusted to fit results.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "logicdiff/backend.hpp"
#include "logicdiff/eval.hpp"
#include "support/fixture_replay.hpp"
#include "support/grad_oracle.hpp"
#include "support/select_oracle.hpp"

using namespace logicdiff;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(bool ok, const char* name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

void info(const char* name, const std::string& detail) {
  std::printf("INFO %s: %s\n", name, detail.c_str());
  std::fflush(stdout);
}

template <class... A>
std::string fmt(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

const Vocab& vocab() { return Vocab::builtin(); }

void priority_suite() {
  const auto t0 = Clock::now();
  const PriorityWeights w;
  const bool examples = std::abs(priority_score(Role::kPremise, 1.0, w) - 0.0) <= 1e-12 &&
                        std::abs(priority_score(Role::kFiller, 1e-15, w) - 1.0) <= 1e-12 &&
                        std::abs(priority_score(Role::kConnective, 0.5, w) - 0.325) <= 1e-12;
  std::mt19937_64 rng(2025);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto s = oracle::random_scores(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, 70)(rng);
    mismatches += select_unmask_set(s, k) != oracle::full_sort_select(s, k);
  }
  const double secs = since(t0);
  report(examples && mismatches == 0 && secs < 5.0, "priority_and_selection",
         fmt("examples %s, %zu/10000 oracle mismatches, %.2fs (limit 5s)", examples ? "exact" : "off",
             mismatches, secs));
}

void gradient_check() {
  const auto t0 = Clock::now();
  Rng rng(4242);
  std::array<double, 6> worst{};
  for (int trial = 0; trial < 50; ++trial) {
    const auto params = oracle::random_params(32, rng);
    const auto t = oracle::random_triple(32, rng, trial % 2 == 1);
    const auto err = oracle::check_triple(params, t);
    for (std::size_t k = 0; k < 6; ++k) worst[k] = std::max(worst[k], err[k]);
  }
  const double secs = since(t0);
  double max_err = 0;
  std::string per;
  for (std::size_t k = 0; k < 6; ++k) {
    max_err = std::max(max_err, worst[k]);
    per += fmt("%s%s %.1e", k ? ", " : "", kTensorNames[k], worst[k]);
  }
  report(max_err <= 1e-4 && secs < 30.0, "gradient_check",
         fmt("50 triples, D=32, worst relative error %s (limit 1e-4), %.2fs (limit 30s)", per.c_str(), secs));
}

RoleHeadParams train_head() {
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto t0 = Clock::now();
  CorpusConfig cc;
  cc.n_problems = 2000;
  cc.rng_seed = 1;
  const auto problems = generate_corpus(cc);
  const auto seqs = labeled_from_corpus(problems, vocab());
  TrapConfig trap;  // noise_sigma 0.25, D 32
  CollectConfig col;
  col.max_samples = 50000;
  col.gen_len = 64;
  col.rng_seed = 1;
  const auto data = collect_hidden_states(seqs, synthetic_hidden_source(trap, vocab()), col,
                                          vocab().mask_id(), vocab().pad_id());
  TrainConfig cfg;
  cfg.rng_seed = 1;
  const auto res = train_role_head(data, cfg);
  const double secs = since(t0);
  omp_set_num_threads(threads);
  report(data.size() == 50000 && res.val_accuracy >= 0.95 && secs < 120.0, "role_head_training",
         fmt("%zu vectors (D=32, sigma=0.25), held-out accuracy %.4f (limit 0.95), %.1fs single thread "
             "(limit 120s)",
             data.size(), res.val_accuracy, secs));
  return res.params;
}

EvalConfig trap_cfg() {
  EvalConfig cfg;
  cfg.generation.steps = cfg.generation.gen_len = 64;
  cfg.seed = 7;
  cfg.keep_traces = true;
  return cfg;
}

std::vector<Problem> trap_corpus(std::size_t n) {
  CorpusConfig cc;
  cc.n_problems = n;
  cc.rng_seed = 500;
  return generate_corpus(cc);
}

const ArmReport& arm(const EvalReport& r, const char* name) {
  for (const auto& a : r.arms) {
    if (a.name == name) return a;
  }
  throw std::runtime_error(std::string("missing arm ") + name);
}

EvalReport trap_reproduction(const RoleHeadParams& head) {
  const auto t0 = Clock::now();
  const auto problems = trap_corpus(500);
  TrapConfig trap;
  trap.beta = 0.9;
  auto cfg = trap_cfg();
  cfg.trap = trap;
  const auto hot = evaluate(problems, vocab(), cfg, synthetic_factory(vocab(), trap), &head);
  trap.beta = 0.0;
  cfg.trap = trap;
  const auto cold = evaluate(problems, vocab(), cfg, synthetic_factory(vocab(), trap), &head);
  const double secs = since(t0);
  const double c9 = arm(hot, "confidence").accuracy, l9 = arm(hot, "logicdiff").accuracy;
  const double c0 = arm(cold, "confidence").accuracy, l0 = arm(cold, "logicdiff").accuracy;
  const bool ok = c9 <= 0.40 && l9 >= 0.90 && (l9 - c9) >= 0.20 && std::abs(l0 - c0) <= 0.03 && secs < 300;
  report(ok, "trap_reproduction",
         fmt("beta=0.9: confidence %.1f%% (limit <=40), logicdiff %.1f%% (limit >=90), gap %+.1fpp "
             "(limit >=+20); beta=0: confidence %.1f%%, logicdiff %.1f%%, gap %+.1fpp (limit +-3); %.1fs "
             "(limit 300s)",
             100 * c9, 100 * l9, 100 * (l9 - c9), 100 * c0, 100 * l0, 100 * (l0 - c0), secs));
  return hot;
}

void deferral(const EvalReport& hot, const RoleHeadParams& head) {
  const auto& conf = arm(hot, "confidence");
  const auto& c = conf.role_steps[static_cast<std::size_t>(Role::kConnective)];
  const auto& d = conf.role_steps[static_cast<std::size_t>(Role::kDerived)];
  const bool deferred = c && d && c->mean > d->mean;

  const auto problems = trap_corpus(500);
  TrapConfig exact;
  exact.beta = 0.9;
  exact.noise_sigma = 0.0;
  auto cfg = trap_cfg();
  cfg.arms = {SchedulerKind::kLogicDiff};
  cfg.generation.w_role = 1.0;
  cfg.generation.w_conf = 0.0;
  const auto probe = role_block_probe();
  const auto strict = evaluate(problems, vocab(), cfg, synthetic_factory(vocab(), exact), &probe);
  const double frac = strict.arms[0].strict_phase_fraction.value_or(0.0);
  report(deferred && frac == 1.0, "deferral_phenomenon",
         fmt("confidence arm mean step CONNECTIVE %.1f vs DERIVED %.1f (need >); logicdiff w_conf=0 with "
             "exact roles strict phases on %.1f%% of %zu traces (need 100%%)",
             c ? c->mean : NAN, d ? d->mean : NAN, 100 * frac, strict.arms[0].n_total));

  TrapConfig noisy;
  noisy.beta = 0.9;
  const auto trained = evaluate(problems, vocab(), cfg, synthetic_factory(vocab(), noisy), &head);
  info("deferral_phenomenon",
       fmt("with the trained head at sigma=0.25 instead of exact roles: strict phases on %.1f%% of traces",
           100 * trained.arms[0].strict_phase_fraction.value_or(0.0)));
}

void degeneracy(const RoleHeadParams& head) {
  auto problems = trap_corpus(100);
  auto cfg = trap_cfg();
  cfg.arms = {SchedulerKind::kConfidence, SchedulerKind::kLogicDiff};
  cfg.generation.w_role = 0.0;
  cfg.generation.w_conf = 1.0;
  const auto rep = evaluate(problems, vocab(), cfg, synthetic_factory(vocab(), TrapConfig{}), &head);
  std::size_t same = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) same += rep.traces[0][i] == rep.traces[1][i];
  report(same == problems.size(), "degeneracy_equivalence",
         fmt("w_role=0: %zu/%zu traces bitwise identical to the confidence arm", same, problems.size()));
}

void determinism(const RoleHeadParams& head) {
  const auto problems = trap_corpus(200);
  auto cfg = trap_cfg();
  cfg.keep_traces = false;
  cfg.arms = {SchedulerKind::kConfidence, SchedulerKind::kLogicDiff, SchedulerKind::kRandom};
  const auto once = [&] {
    const auto rep = evaluate(problems, vocab(), cfg, synthetic_factory(vocab(), TrapConfig{}), &head);
    return mask_timing(report_to_json(rep)).dump(2);
  };
  const auto a = once();
  const auto b = once();
  report(a == b, "eval_determinism",
         fmt("two seeded runs, %zu bytes of JSON each after masking timing, %s", a.size(),
             a == b ? "byte-identical" : "different"));
}

void protocol_round_trip() {
  const auto outcomes = fixtures::replay_all(std::string(LOGICDIFF_FIXTURES) + "/protocol");
  std::size_t ok = 0;
  std::string bad;
  for (const auto& o : outcomes) {
    ok += o.ok;
    if (!o.ok) bad += " " + o.file + " (" + o.detail + ")";
  }
  report(ok == outcomes.size() && !outcomes.empty(), "protocol_round_trip",
         fmt("%zu/%zu recorded fixtures behave as declared%s", ok, outcomes.size(), bad.c_str()));
}

}  // namespace

int main() {
  try {
    priority_suite();
    gradient_check();
    const auto head = train_head();
    const auto hot = trap_reproduction(head);
    deferral(hot, head);
    degeneracy(head);
    determinism(head);
    protocol_round_trip();
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance: aborted: %s\n", e.what());
    return 1;
  }
  return failures;
}
