#include <algorithm>
#include <cstdio>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "logicdiff/backend.hpp"
#include "logicdiff/corpus.hpp"
#include "logicdiff/eval.hpp"
#include "logicdiff/labeling.hpp"
#include "logicdiff/protocol.hpp"
#include "logicdiff/remote.hpp"
#include "logicdiff/rolehead.hpp"
#include "logicdiff/scheduler.hpp"

using namespace logicdiff;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << text;
}

struct TrapOptions {
  double beta = 0.9;
  double split = 0.5;
  double sigma = 0.25;
  std::size_t dim = 32;

  void add(CLI::App* app) {
    app->add_option("--beta", beta, "Trap mass on the distractor branch")->capture_default_str();
    app->add_option("--split", split, "Connective split while premises are masked")->capture_default_str();
    app->add_option("--sigma", sigma, "Noise on the role features")->capture_default_str();
    app->add_option("--dim", dim, "Synthetic hidden dimension")->capture_default_str();
  }
  TrapConfig config() const {
    TrapConfig t{beta, split, sigma, dim};
    t.validate();
    return t;
  }
};

struct VocabOption {
  std::string path;
  std::optional<Vocab> loaded;

  void add(CLI::App* app) { app->add_option("--vocab", path, "Vocabulary JSON (default: builtin)"); }
  const Vocab& get() {
    if (path.empty()) return Vocab::builtin();
    if (!loaded) loaded = Vocab::load(path);
    return *loaded;
  }
};

bool is_remote(const std::string& backend) { return backend.rfind("remote:", 0) == 0; }

Endpoint remote_endpoint(const std::string& backend) { return Endpoint::parse(backend.substr(7)); }

void check_backend_name(const std::string& backend) {
  if (backend != "synthetic" && !is_remote(backend)) {
    throw Error(ErrorKind::kInvalidConfig, "backend must be 'synthetic' or 'remote:<host:port>'");
  }
}

// ---- corpus ----------------------------------------------------------------

struct CorpusCmd {
  CorpusConfig cfg;
  std::string out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("corpus", "Generate the synthetic arithmetic-chain corpus");
    c->add_option("-n,--n", cfg.n_problems, "Problem count")->capture_default_str();
    c->add_option("--steps-min", cfg.steps_min)->capture_default_str();
    c->add_option("--steps-max", cfg.steps_max)->capture_default_str();
    c->add_option("--value-max", cfg.value_max)->capture_default_str();
    c->add_option("--seed", cfg.rng_seed)->capture_default_str();
    c->add_option("-o,--out", out, "Output JSONL")->required();
    c->callback([this] { run(); });
  }
  void run() {
    cfg.validate();
    const auto problems = generate_corpus(cfg);
    write_corpus(out, cfg, problems);
    std::printf("wrote %zu problems to %s\n", problems.size(), out.c_str());
  }
};

// ---- label -----------------------------------------------------------------

struct LabelCmd {
  std::string corpus, gsm8k, out, vocab_out, stats_out;
  VocabOption vocab;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("label", "Two-pass role labeling into token_ids/roles JSONL");
    auto* a = c->add_option("--corpus", corpus, "Synthetic corpus JSONL");
    auto* b = c->add_option("--gsm8k", gsm8k, "GSM8K-format JSONL ({question, answer})");
    a->excludes(b);
    c->add_option("-o,--out", out, "Labeled JSONL")->required();
    c->add_option("--vocab-out", vocab_out,
                  "Extend the vocabulary with every token seen and write it here");
    c->add_option("--stats-out", stats_out, "Class distribution and weights as JSON");
    vocab.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!corpus.empty()) {
      for (const auto& p : read_corpus(corpus)) pairs.emplace_back(join(p.question), join(p.solution));
    } else if (!gsm8k.empty()) {
      const IngestResult ing = ingest_solutions(gsm8k);
      for (const auto& d : ing.diagnostics) std::fprintf(stderr, "%s: %s\n", gsm8k.c_str(), d.c_str());
      for (const auto& r : ing.records) pairs.emplace_back(r.question, r.solution);
    } else {
      throw Error(ErrorKind::kInvalidConfig, "one of --corpus or --gsm8k is required");
    }

    Vocab v = vocab.get();
    if (!vocab_out.empty()) {
      std::vector<std::string> seen;
      for (const auto& [q, s] : pairs) {
        for (auto& t : normalize_tokens(q)) seen.push_back(std::move(t));
        for (auto& t : normalize_tokens(s)) seen.push_back(std::move(t));
      }
      v = v.extended_with(seen);
      v.save(vocab_out);
    }

    std::ofstream os(out);
    if (!os) throw Error(ErrorKind::kIo, "cannot write " + out);
    std::vector<Role> all;
    for (const auto& [q, s] : pairs) {
      const auto labeled = label_solution(q, s, v);
      for (const auto& t : labeled) all.push_back(t.role);
      os << labeled_to_json_line(labeled) << '\n';
    }
    std::printf("labeled %zu solutions, %zu tokens\n", pairs.size(), all.size());
    if (all.empty()) return;
    const auto rep = compute_class_weights(all);
    json stats = {{"total", rep.total}, {"roles", json::object()}};
    for (Role r : kAllRoles) {
      const auto k = static_cast<std::size_t>(r);
      std::printf("  %-10s %8zu  %6.2f%%  weight %.1f\n", role_name(r), rep.counts[k],
                  100.0 * rep.distribution[k], rep.weights.weight[k]);
      stats["roles"][role_name(r)] = {
          {"count", rep.counts[k]}, {"share", rep.distribution[k]}, {"weight", rep.weights.weight[k]}};
    }
    if (!stats_out.empty()) write_text(stats_out, stats.dump(2) + "\n");
  }
};

// ---- train-head ------------------------------------------------------------

struct TrainCmd {
  std::string labeled, backend = "synthetic", out, metrics_out;
  CollectConfig collect{50000, 64, 0};
  TrainConfig train;
  TrapOptions trap;
  VocabOption vocab;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("train-head", "Collect hidden states and train the role head");
    c->add_option("--labeled", labeled, "Labeled JSONL from `label`")->required();
    c->add_option("--backend", backend, "synthetic | remote:<host:port>")->capture_default_str();
    c->add_option("--samples", collect.max_samples)->capture_default_str();
    c->add_option("--gen-len", collect.gen_len, "Window length; shorter solutions are padded")
        ->capture_default_str();
    c->add_option("--epochs", train.epochs)->capture_default_str();
    c->add_option("--batch", train.batch_size)->capture_default_str();
    c->add_option("--lr", train.learning_rate)->capture_default_str();
    c->add_option("--momentum", train.momentum)->capture_default_str();
    c->add_option("--dropout", train.dropout_rate)->capture_default_str();
    c->add_option("--val-fraction", train.val_fraction)->capture_default_str();
    c->add_option("--seed", train.rng_seed)->capture_default_str();
    c->add_option("-o,--out", out, "Checkpoint path")->required();
    c->add_option("--metrics-out", metrics_out, "Metrics JSON path");
    trap.add(c);
    vocab.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    check_backend_name(backend);
    train.validate();
    collect.rng_seed = substream_seed(train.rng_seed, 1);
    const Vocab& v = vocab.get();
    const auto seqs = read_labeled(labeled);
    HiddenSource source;
    std::shared_ptr<RemoteBackend> remote;
    if (is_remote(backend)) {
      remote = std::make_shared<RemoteBackend>(remote_endpoint(backend));
      source = [remote](const SequenceState& s, std::span<const TokenId>, std::span<const Role>) {
        return remote->forward(s).hidden;
      };
    } else {
      source = synthetic_hidden_source(trap.config(), v);
    }
    const LabeledHidden data = collect_hidden_states(seqs, source, collect, v.mask_id(), v.pad_id());
    std::printf("collected %zu hidden vectors (D=%zu)\n", data.size(), data.dim);
    const TrainResult res = train_role_head(data, train);
    save_checkpoint(res.params, out);

    json recall = json::object();
    for (Role r : kAllRoles) {
      const double x = res.per_class_recall[static_cast<std::size_t>(r)];
      recall[role_name(r)] = std::isnan(x) ? json(nullptr) : json(x);
    }
    const json metrics = {{"val_accuracy", res.val_accuracy},
                          {"per_class_recall", recall},
                          {"param_count", res.params.param_count()},
                          {"epoch_loss", res.epoch_loss},
                          {"n_train", res.n_train},
                          {"n_val", res.n_val}};
    std::printf("val_accuracy %.4f, %zu params -> %s\n", res.val_accuracy, res.params.param_count(),
                out.c_str());
    if (!metrics_out.empty()) write_text(metrics_out, metrics.dump(2) + "\n");
  }
};

// ---- shared generation flags -------------------------------------------------

struct GenFlags {
  std::string backend = "synthetic";
  std::string scheduler = "logicdiff";
  std::string head;
  GenerationConfig cfg;

  void add(CLI::App* c, bool with_scheduler) {
    c->add_option("--backend", backend, "synthetic | remote:<host:port>")->capture_default_str();
    if (with_scheduler) {
      c->add_option("--scheduler", scheduler, "confidence | logicdiff | random")->capture_default_str();
    }
    c->add_option("--head", head, "Role-head checkpoint");
    c->add_option("--steps", cfg.steps)->capture_default_str();
    c->add_option("--gen-len", cfg.gen_len)->capture_default_str();
    c->add_option("--wr", cfg.w_role, "Role weight")->capture_default_str();
    c->add_option("--wc", cfg.w_conf, "Confidence weight")->capture_default_str();
    c->add_option("--seed", cfg.rng_seed)->capture_default_str();
  }
  std::optional<RoleHeadParams> load_head() const {
    if (head.empty()) return std::nullopt;
    return load_checkpoint(head);
  }
};

// ---- generate --------------------------------------------------------------

struct GenerateCmd {
  GenFlags flags;
  std::string corpus, prompt, trace_out;
  std::size_t problem = 0;
  TrapOptions trap;
  VocabOption vocab;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("generate", "Run one generation and print the result");
    flags.add(c, true);
    c->add_option("--corpus", corpus, "Corpus JSONL (prompt source; required for synthetic)");
    c->add_option("--problem", problem, "Problem index in the corpus")->capture_default_str();
    c->add_option("--prompt", prompt, "Whitespace-separated prompt tokens (remote backend)");
    c->add_option("--trace-out", trace_out, "Unmask trace JSONL");
    trap.add(c);
    vocab.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    check_backend_name(flags.backend);
    flags.cfg.scheduler = scheduler_from_name(flags.scheduler);
    const Vocab& v = vocab.get();
    std::optional<Problem> p;
    if (!corpus.empty()) {
      const auto problems = read_corpus(corpus);
      if (problem >= problems.size()) throw Error(ErrorKind::kInvalidInput, "--problem out of range");
      p = problems[problem];
    }
    std::unique_ptr<Denoiser> backend;
    std::vector<TokenId> prompt_ids;
    if (is_remote(flags.backend)) {
      backend = std::make_unique<RemoteBackend>(remote_endpoint(flags.backend));
      if (!prompt.empty()) {
        prompt_ids = v.encode_text(prompt);
      } else if (p) {
        prompt_ids = v.encode_all(p->question);
      } else {
        throw Error(ErrorKind::kInvalidConfig, "remote generation needs --prompt or --corpus");
      }
    } else {
      if (!p) throw Error(ErrorKind::kInvalidConfig, "the synthetic backend needs --corpus");
      backend = std::make_unique<SyntheticBackend>(*p, v, trap.config());
      prompt_ids = v.encode_all(p->question);
    }
    const auto head = flags.load_head();
    const GenerationResult res =
        generate(*backend, head ? &*head : nullptr, prompt_ids, flags.cfg, v.mask_id());
    if (!trace_out.empty()) write_trace(res.trace, trace_out);

    std::printf("prompt:  %s\n", v.decode_text(res.state.prompt()).c_str());
    std::printf("output:  %s\n", v.decode_text(res.state.window()).c_str());
    const auto ans = extract_answer(res.state.window(), v);
    std::printf("answer:  %s", ans ? std::to_string(*ans).c_str() : "none");
    if (p) std::printf(" (gold %d, %s)", p->answer, ans && *ans == p->answer ? "correct" : "wrong");
    std::printf("\nsteps:   %zu\n", res.steps_run);
    if (res.error) {
      std::fprintf(stderr, "aborted%s: %s\n", res.resumable ? " (resumable)" : "", res.error->c_str());
      throw CLI::RuntimeError(1);
    }
  }
};

// ---- eval ------------------------------------------------------------------

struct EvalCmd {
  GenFlags flags;
  std::string corpus, gsm8k, arms = "confidence,logicdiff", out, format = "json";
  std::size_t warmup = 5, limit = 0;
  bool serial = false;
  TrapOptions trap;
  VocabOption vocab;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("eval", "A/B evaluation over a corpus");
    flags.add(c, false);
    auto* a = c->add_option("--corpus", corpus, "Synthetic corpus JSONL");
    auto* b = c->add_option("--gsm8k", gsm8k, "GSM8K-format JSONL (remote backend only)");
    a->excludes(b);
    c->add_option("--arms", arms, "Comma-separated schedulers")->capture_default_str();
    c->add_option("--warmup", warmup, "Problems excluded from timing")->capture_default_str();
    c->add_option("--limit", limit, "Evaluate at most this many problems (0 = all)");
    c->add_flag("--serial", serial, "Disable the parallel worker pool");
    c->add_option("-o,--out", out, "Report path (default: stdout)");
    c->add_option("--format", format, "json | csv | svg")->capture_default_str();
    trap.add(c);
    vocab.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    check_backend_name(flags.backend);
    const Vocab& v = vocab.get();
    std::vector<Problem> problems;
    if (!corpus.empty()) {
      problems = read_corpus(corpus);
    } else if (!gsm8k.empty()) {
      if (!is_remote(flags.backend)) {
        throw Error(ErrorKind::kInvalidConfig, "GSM8K evaluation needs a remote backend");
      }
      const IngestResult ing = ingest_solutions(gsm8k);
      for (const auto& r : ing.records) {
        Problem p;
        p.question = normalize_tokens(r.question);
        const auto gold = extract_answer(normalize_tokens(r.solution));
        if (!gold) continue;
        p.answer = static_cast<int>(*gold);
        problems.push_back(std::move(p));
      }
    } else {
      throw Error(ErrorKind::kInvalidConfig, "one of --corpus or --gsm8k is required");
    }
    if (limit > 0 && problems.size() > limit) problems.resize(limit);

    EvalConfig cfg;
    cfg.generation = flags.cfg;
    cfg.seed = flags.cfg.rng_seed;
    cfg.warmup = warmup;
    cfg.parallel = !serial;
    cfg.backend = is_remote(flags.backend) ? "remote" : "synthetic";
    cfg.arms.clear();
    for (const auto& a : split_list(arms)) cfg.arms.push_back(scheduler_from_name(a));
    BackendFactory factory;
    if (is_remote(flags.backend)) {
      const Endpoint ep = remote_endpoint(flags.backend);
      factory = [ep](std::size_t, const Problem&) { return std::make_unique<RemoteBackend>(ep); };
    } else {
      cfg.trap = trap.config();
      factory = synthetic_factory(v, *cfg.trap);
    }
    const auto head = flags.load_head();
    const EvalReport report = evaluate(problems, v, cfg, factory, head ? &*head : nullptr);
    const ReportFormat fmt = report_format_from_name(format);
    if (out.empty()) {
      std::cout << render_report(report, fmt);
    } else {
      emit_report(report, out, fmt);
      for (const auto& a : report.arms) {
        std::printf("%-12s accuracy %.3f (%zu/%zu), errored %zu\n", a.name.c_str(), a.accuracy,
                    a.n_correct, a.n_total, a.n_errored);
      }
    }
  }
};

// ---- compare ---------------------------------------------------------------

struct CompareCmd {
  std::vector<std::string> reports;
  bool same = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("compare", "Summarize eval reports side by side");
    c->add_option("reports", reports, "Report JSON files")->required();
    c->add_flag("--same", same, "Exit non-zero unless all reports are identical with timing masked");
    c->callback([this] { run(); });
  }

  void run() {
    std::vector<json> loaded;
    for (const auto& path : reports) {
      std::ifstream in(path);
      if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
      loaded.push_back(json::parse(in));
    }
    std::printf("%-28s %-14s %9s %8s %10s %10s %9s\n", "report", "arm", "accuracy", "errored",
                "conn_step", "deriv_step", "overhead");
    for (std::size_t i = 0; i < loaded.size(); ++i) {
      const EvalReport r = report_from_json(loaded[i]);
      double base = -1.0;
      for (const auto& a : r.arms) {
        if (a.scheduler == SchedulerKind::kConfidence && base < 0.0) base = a.accuracy;
      }
      for (const auto& a : r.arms) {
        auto step = [&](Role role) {
          const auto& s = a.role_steps[static_cast<std::size_t>(role)];
          return s ? s->mean : std::nan("");
        };
        std::printf("%-28s %-14s %9.3f %8zu %10.2f %10.2f %9.3f", reports[i].c_str(), a.name.c_str(),
                    a.accuracy, a.n_errored, step(Role::kConnective), step(Role::kDerived),
                    a.timing.overhead_ratio.value_or(std::nan("")));
        if (base >= 0.0 && a.scheduler != SchedulerKind::kConfidence) {
          std::printf("  (%+.1fpp vs confidence)", 100.0 * (a.accuracy - base));
        }
        std::printf("\n");
      }
    }
    if (same) {
      const std::string first = mask_timing(loaded.front()).dump();
      for (std::size_t i = 1; i < loaded.size(); ++i) {
        if (mask_timing(loaded[i]).dump() != first) {
          std::fprintf(stderr, "%s differs from %s\n", reports[i].c_str(), reports[0].c_str());
          throw CLI::RuntimeError(1);
        }
      }
      std::printf("identical with timing masked\n");
    }
  }
};

// ---- serve-synthetic -------------------------------------------------------

volatile std::sig_atomic_t g_stop = 0;

struct ServeCmd {
  std::string corpus, host = "127.0.0.1";
  std::uint16_t port = 7421;
  bool sparse = false;
  TrapOptions trap;
  VocabOption vocab;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("serve-synthetic",
                                  "Serve the synthetic oracle over the v1 wire protocol");
    c->add_option("--corpus", corpus, "Problems to serve (prompts select the problem)")->required();
    c->add_option("--host", host)->capture_default_str();
    c->add_option("--port", port)->capture_default_str();
    c->add_flag("--sparse", sparse, "Send hidden rows for masked positions only");
    trap.add(c);
    vocab.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    FrameServer server(synthetic_handler(read_corpus(corpus), vocab.get(), trap.config(), sparse), host,
                       port);
    std::printf("serving on %s:%u (Ctrl-C to stop)\n", host.c_str(), server.port());
    std::fflush(stdout);
    std::signal(SIGINT, [](int) { g_stop = 1; });
    std::signal(SIGTERM, [](int) { g_stop = 1; });
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-diffusion generation with logic-role-guided unmasking"};
  app.require_subcommand(1);
  spdlog::set_level(spdlog::level::warn);
  app.add_flag_callback("-v,--verbose", [] { spdlog::set_level(spdlog::level::debug); },
                        "Debug logging (remote request/response pairs)");

  CorpusCmd corpus;
  LabelCmd label;
  TrainCmd train;
  GenerateCmd gen;
  EvalCmd eval;
  CompareCmd compare;
  ServeCmd serve;
  corpus.add(app);
  label.add(app);
  train.add(app);
  gen.add(app);
  eval.add(app);
  compare.add(app);
  serve.add(app);

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
