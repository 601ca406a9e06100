// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments name
// the criteria to run (default: all). Exit status is non-zero when any fails.

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

#include "diffcap/cli.hpp"
#include "diffcap/config.hpp"
#include "diffcap/decoding.hpp"
#include "diffcap/diffusion.hpp"
#include "diffcap/io.hpp"
#include "diffcap/metrics.hpp"
#include "diffcap/pipeline.hpp"
#include "diffcap/schedule.hpp"
#include "diffcap/synthdata.hpp"
#include "diffcap/train.hpp"

#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

using namespace diffcap;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Counts checks and keeps the first few failures.
struct Checks {
  long total = 0;
  long failures = 0;
  std::vector<std::string> failed;

  void expect(bool ok, const std::string& what) {
    ++total;
    if (ok) return;
    ++failures;
    if (failed.size() < 5) failed.push_back(what);
  }
  bool ok() const { return failures == 0; }
  std::string summary() const {
    std::string s = std::to_string(total - failures) + "/" + std::to_string(total) + " checks";
    for (const auto& f : failed) s += "; failed: " + f;
    return s;
  }
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------- 1
Outcome diffusion_math() {
  const auto t0 = Clock::now();
  Checks c;
  for (auto kind : {ScheduleKind::Sqrt, ScheduleKind::Linear, ScheduleKind::Cosine}) {
    for (int T : {1, 10, 200, 2000}) {
      const NoiseSchedule s = build_schedule(kind, T);
      for (int t = 1; t <= T; ++t) {
        c.expect(s.beta(t) > 0 && s.beta(t) <= NoiseSchedule::kMaxBeta, "beta range");
        c.expect(s.alpha_bar(t) < s.alpha_bar(t - 1), "alpha_bar decreasing");
        c.expect(std::abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * (1 - s.beta(t))) <= 1e-12, "alpha_bar product");
        const PosteriorCoeffs pc = posterior_coeffs(s, t);
        c.expect(std::abs(pc.c_xt * std::sqrt(s.alpha_bar(t)) + pc.c_x0 - std::sqrt(s.alpha_bar(t - 1))) <= 1e-10,
                 "coefficient identity " + to_string(kind) + " t=" + std::to_string(t));
      }
    }
  }

  // posterior against dense-grid integration
  Rng rng(101);
  std::uniform_real_distribution<double> u(-3, 3);
  for (auto kind : {ScheduleKind::Sqrt, ScheduleKind::Linear, ScheduleKind::Cosine}) {
    const NoiseSchedule s = build_schedule(kind, 200);
    for (int trial = 0; trial < 10; ++trial) {
      const int t = std::uniform_int_distribution<int>(2, 200)(rng);
      const double x0 = u(rng), xt = u(rng);
      const PosteriorCoeffs pc = posterior_coeffs(s, t);
      const auto m = oracle::posterior_by_grid(x0, xt, s.alpha(t), s.alpha_bar(t - 1));
      c.expect(std::abs(pc.c_xt * xt + pc.c_x0 * x0 - m.mean) <= 1e-6, "posterior mean vs grid");
      c.expect(std::abs(pc.var - m.var) <= 1e-6, "posterior variance vs grid");
    }
  }

  // forward marginal at t = T over 10^5 scalar draws
  const auto cfg = testing::tiny_config();
  const NoiseSchedule s = build_schedule(ScheduleKind::Sqrt, 2000);
  const LatentSequence<double> x0{random_normal<double>(cfg.seq_len(), cfg.embed_dim, rng), cfg.img_len, cfg.cap_len};
  const long per_draw = static_cast<long>(cfg.cap_len) * cfg.embed_dim;
  const long draws = (100000 + per_draw - 1) / per_draw;
  const double abar = s.alpha_bar(2000);
  double sum = 0, sum2 = 0;
  long n = 0;
  bool pure = true;
  for (long i = 0; i < draws; ++i) {
    const auto xt = forward_noise(x0, 2000, s, rng);
    pure &= xt.image() == x0.image();
    const Matrix<double> r = xt.caption() - std::sqrt(abar) * x0.caption();
    sum += r.sum();
    sum2 += r.squaredNorm();
    n += r.size();
  }
  const double mean = sum / n, var = sum2 / n - mean * mean;
  const double sigma = std::sqrt(1 - abar);
  c.expect(std::abs(mean) <= 4 * sigma / std::sqrt(static_cast<double>(n)), "forward marginal mean");
  c.expect(std::abs(var - (1 - abar)) <= 0.05 * (1 - abar), "forward marginal variance");
  c.expect(pure, "image segment bit-identical");
  const double secs = seconds_since(t0);
  c.expect(secs < 60, "runtime under 1 min");
  return {c.ok(), c.summary() + ", N=" + std::to_string(n) + ", " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------- 2
Outcome gradient_check() {
  const auto t0 = Clock::now();
  const auto cfg = testing::tiny_config();
  Rng init(21);
  const auto p = init_params<double>(cfg, init);
  Checks c;
  c.expect(p.parameter_count() <= 5000, "parameter budget");

  // denoiser output contracted with a random weight
  const int B = 2;
  Rng rng(22);
  const Matrix<double> x = random_normal<double>(B * cfg.seq_len(), cfg.embed_dim, rng);
  const Matrix<double> w = random_normal<double>(B * cfg.seq_len(), cfg.embed_dim, rng);
  const std::vector<int> ts{4, 37};
  auto forward_loss = [&](const DenoiserParams<double>& q) {
    return denoiser_forward(q, cfg, x, std::span<const int>(ts)).cwiseProduct(w).sum();
  };
  ForwardCache<double> cache;
  denoiser_forward(p, cfg, x, std::span<const int>(ts), &cache);
  auto g1 = DenoiserParams<double>::zeros_like(p);
  denoiser_backward(p, cfg, cache, w, g1);
  const auto r1 = testing::check_gradients(p, g1, forward_loss, 25, 23);

  // full training objective
  std::vector<InputPair> pairs;
  for (int i = 0; i < 3; ++i)
    pairs.push_back({testing::random_view(2, cfg.features, rng), testing::random_caption(cfg.cap_len, cfg.vocab_size, rng)});
  const NoiseSchedule s = build_schedule(ScheduleKind::Sqrt, 50);
  TrainConfig tc;
  tc.steps_T = 50;
  tc.reg_weight = 0.01;
  tc.ce_weight = 0.5;
  auto objective = [&](const DenoiserParams<double>& q) {
    Rng r(24);
    return training_loss<double>(q, cfg, pairs, s, tc, r).total;
  };
  auto g2 = DenoiserParams<double>::zeros_like(p);
  Rng r(24);
  training_loss<double>(p, cfg, pairs, s, tc, r, &g2);
  // The objective's third derivative along time.w1 puts the h = 1e-3 truncation
  // error near 1e-4; it falls as h^2, so a smaller step is used here.
  const auto r2 = testing::check_gradients(p, g2, objective, 25, 25, 1e-4);

  const double secs = seconds_since(t0);
  c.expect(r1.worst <= 1e-4, "denoiser gradient (" + r1.worst_tensor + ")");
  c.expect(r2.worst <= 1e-4, "training loss gradient (" + r2.worst_tensor + ")");
  c.expect(secs < 120, "runtime under 2 min");
  return {c.ok(), c.summary() + ", " + std::to_string(p.parameter_count()) + " params, " +
                      std::to_string(r1.coordinates + r2.coordinates) + " coordinates, worst rel err " +
                      fmt("%.2e", std::max(r1.worst, r2.worst)) + ", " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------- 3
Outcome rounding_inverse() {
  Checks c;
  long tokens = 0;
  // the grammar's vocabulary at the criterion-6 width
  RunConfig rc;
  rc.set("embed_dim", "32");
  rc.set("n_layers", "1");
  const DenoiserConfig full = rc.model(rc.grammar());
  for (const DenoiserConfig& cfg : {testing::tiny_config(), full}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(300 + seed);
      const auto table = init_params<float>(cfg, rng).embedding;
      // well separated: distinct rows
      double min_gap = 1e300;
      for (int a = 0; a < cfg.vocab_size; ++a)
        for (int b = a + 1; b < cfg.vocab_size; ++b)
          min_gap = std::min(min_gap, static_cast<double>((table.tokens.row(a) - table.tokens.row(b)).norm()));
      c.expect(min_gap > 0.1, "table separation");
      for (int w = 0; w < cfg.vocab_size; ++w) {
        const int grid = static_cast<int>(std::lround(std::sqrt(cfg.img_len)));
        const InputPair pair{ViewPatchGrid(grid), std::vector<int>(cfg.cap_len, w)};
        const auto x = embed_pair(table, pair);
        const auto r = round_to_tokens(table, x.caption());
        bool all = true;
        for (int k = 0; k < cfg.cap_len; ++k) all &= r.tokens[k] == w;
        c.expect(all, "token " + std::to_string(w));
        ++tokens;
      }
    }
  }
  return {c.ok(), c.summary() + ", " + std::to_string(tokens) + " token rows over 40 tables"};
}

// ---------------------------------------------------------------- 4
Outcome mbr_oracle() {
  Rng rng(400);
  int match = 0;
  const int sets = 200;
  for (int trial = 0; trial < sets; ++trial) {
    const int S = std::uniform_int_distribution<int>(2, 8)(rng);
    std::vector<std::vector<int>> set;
    for (int i = 0; i < S; ++i) {
      std::vector<int> seq(std::uniform_int_distribution<int>(1, 10)(rng));
      for (auto& t : seq) t = std::uniform_int_distribution<int>(0, 4)(rng);
      set.push_back(seq);
    }
    match += mbr_select(std::span<const std::vector<int>>(set)).index == oracle::mbr(set);
  }
  return {match == sets, std::to_string(match) + "/" + std::to_string(sets) + " sets match the exhaustive oracle"};
}

// ---------------------------------------------------------------- 5
Outcome metric_oracles() {
  Checks c;
  using Seq = std::vector<int>;
  Rng rng(500);
  auto random_seq = [&](int lo, int hi) {
    Seq s(std::uniform_int_distribution<int>(lo, hi)(rng));
    for (auto& x : s) x = std::uniform_int_distribution<int>(0, 4)(rng);
    return s;
  };
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Seq cand = random_seq(1, 12);
    std::vector<Seq> refs;
    const int nr = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int r = 0; r < nr; ++r) refs.push_back(random_seq(1, 12));
    bool all = rouge_l<int>(cand, refs) == oracle::rouge_l(cand, refs);
    for (int n = 1; n <= 4; ++n)
      for (bool smooth : {false, true}) all &= bleu<int>(cand, refs, n, smooth) == oracle::bleu(cand, refs, n, smooth);
    exact += all;
    c.expect(all, "random pair " + std::to_string(trial));
  }
  // hand examples over words
  auto words = [](const std::string& s) {
    Seq out;
    for (char ch : s)
      if (ch != ' ') out.push_back(ch);
    return out;
  };
  const double b1 = bleu<int>(words("a a a"), std::vector<Seq>{words("a b")}, 1, false);
  const double rl = rouge_l<int>(words("a b c"), std::vector<Seq>{words("a c")});
  c.expect(std::abs(b1 - 1.0 / 3) <= 1e-6, "BLEU@1 hand example");
  c.expect(std::abs(rl - 0.8) <= 1e-6, "ROUGE-L hand example");
  return {c.ok(), std::to_string(exact) + "/100 random pairs exact; BLEU@1 " + fmt("%.6f", b1) + ", ROUGE-L " +
                      fmt("%.6f", rl)};
}

// ------------------------------------------------- shared training runs
const fs::path kWork = fs::temp_directory_path() / "diffcap_acceptance";

// Criterion 6 configuration: H = 32, T = 200, V = 4 on 32 shapes.
RunConfig overfit_config() {
  RunConfig rc;
  rc.set("n_shapes", "32");
  rc.set("max_views", "4");
  rc.set("views", "4");
  rc.set("embed_dim", "32");
  rc.set("d_model", "64");
  rc.set("n_layers", "2");
  rc.set("T", "200");
  rc.set("steps", "20000");
  rc.set("warmup", "500");
  rc.set("batch_size", "16");
  rc.set("inference_steps", "200");
  rc.validate();
  return rc;
}

// The same model and optimizer on the full synthetic corpus: 256 shapes with
// 10 rendered viewpoints each, training on the first 8.
RunConfig scaled_config() {
  RunConfig rc = overfit_config();
  rc.set("n_shapes", "256");
  rc.set("max_views", "10");
  rc.set("views", "8");
  rc.validate();
  return rc;
}

struct TrainedModel {
  RunConfig config;
  CaptionGrammar grammar;
  Vocabulary vocab;
  Corpus corpus;
  DenoiserConfig model;
  TrainConfig train;
  TrainState state;
  double train_seconds = 0;
  fs::path dir;
};

TrainedModel train_model(const RunConfig& rc, const std::string& name) {
  TrainedModel m;
  m.config = rc;
  m.grammar = rc.grammar();
  m.vocab = m.grammar.vocabulary();
  m.corpus = generate_corpus(rc.corpus(), ViewSpec::standard(static_cast<int>(rc.get_int("max_views"))), m.grammar,
                             static_cast<std::uint64_t>(rc.get_int("seed")));
  m.model = rc.model(m.grammar);
  m.train = rc.train();
  m.dir = kWork / name;
  fs::create_directories(m.dir);
  write_file_atomic((m.dir / "corpus.jsonl").string(), corpus_jsonl(m.corpus, m.grammar));
  const auto records = m.corpus.split("train");
  const auto pairs = training_pairs(records, m.vocab, static_cast<int>(rc.get_int("views")), m.model.cap_len);
  const auto t0 = Clock::now();
  m.state = init_train_state(m.model, m.train);
  train(m.state, pairs, m.model, m.train);
  m.train_seconds = seconds_since(t0);
  Checkpoint ck{m.model, m.train, m.state.params, m.state.adam, rc.hash()};
  save_checkpoint((m.dir / "checkpoint").string(), ck, m.vocab);
  return m;
}

MetricsReport evaluate(const TrainedModel& m, const std::string& split, int views, int K) {
  const auto records = m.corpus.split(split);
  const NoiseSchedule schedule = inference_schedule(m.train.schedule, m.train.steps_T, K);
  return evaluate_records(m.state.params, m.model, m.vocab, records, views, schedule, m.config.decode());
}

std::optional<TrainedModel> g_overfit;
std::optional<TrainedModel> g_scaled;

const TrainedModel& overfit_model() {
  if (!g_overfit) g_overfit = train_model(overfit_config(), "overfit");
  return *g_overfit;
}

// ---------------------------------------------------------------- 6
Outcome overfit_run() {
  const auto t0 = Clock::now();
  const TrainedModel& m = overfit_model();
  const MetricsReport r = evaluate(m, "train", 4, 200);
  const double secs = seconds_since(t0);
  const double em = r.get("exact_match"), b4 = r.get("bleu4");
  Checks c;
  c.expect(m.vocab.size() <= 64, "vocabulary size");
  c.expect(m.state.adam.step <= 20000, "optimizer steps");
  c.expect(em >= 0.9, "exact match");
  c.expect(b4 >= 0.9, "BLEU@4");
  c.expect(secs <= 1800, "wall clock");
  return {c.ok(), std::to_string(r.examples.size()) + " train shapes, vocab " + std::to_string(m.vocab.size()) +
                      ", " + std::to_string(m.state.adam.step) + " steps, exact match " + fmt("%.3f", em) +
                      ", BLEU@4 " + fmt("%.3f", b4) + ", train " + fmt("%.0f s", m.train_seconds) + ", total " +
                      fmt("%.0f s", secs)};
}

// ---------------------------------------------------------------- 7
Outcome multiview_trend() {
  const auto t0 = Clock::now();
  if (!g_scaled) g_scaled = train_model(scaled_config(), "scaled");
  const TrainedModel& m = *g_scaled;
  const double v8 = evaluate(m, "test", 8, 200).get("bleu4");
  const double v1 = evaluate(m, "test", 1, 200).get("bleu4");
  const auto n = m.corpus.split("test").size();
  return {v8 - v1 >= 0.05, std::to_string(n) + " test shapes, BLEU@4 V=8 " + fmt("%.3f", v8) + " vs V=1 " +
                               fmt("%.3f", v1) + " (gain " + fmt("%+.3f", v8 - v1) + "), " +
                               fmt("%.0f s", seconds_since(t0))};
}

// ---------------------------------------------------------------- 8
Outcome respacing_fidelity() {
  const auto t0 = Clock::now();
  const TrainedModel& m = overfit_model();
  const int T = m.train.steps_T;
  const double full = evaluate(m, "test", 4, T).get("bleu4");
  const double fast = evaluate(m, "test", 4, T / 10).get("bleu4");
  return {std::abs(full - fast) <= 0.10, std::to_string(m.corpus.split("test").size()) + " test shapes, BLEU@4 K=" +
                                             std::to_string(T) + " " + fmt("%.3f", full) + " vs K=" +
                                             std::to_string(T / 10) + " " + fmt("%.3f", fast) + ", " +
                                             fmt("%.0f s", seconds_since(t0))};
}

// ---------------------------------------------------------------- 9
Outcome ablation_harness() {
  const auto t0 = Clock::now();
  const TrainedModel& m = overfit_model();
  const fs::path out = kWork / "ablate";
  fs::create_directories(out);
  // Retraining axes use a short run; the comparisons are reported, not asserted.
  const std::vector<std::pair<std::string, std::string>> axes{
      {"V", "1,2,4"}, {"S", "1,3,5"}, {"pooling", "max,mean,stochastic"}, {"H", "16,32"},
      {"schedule", "sqrt,linear,cosine"}};
  Checks c;
  std::string data;
  for (const auto& [axis, values] : axes) {
    std::vector<std::string> args{"ablate",       "--dataset", (m.dir / "corpus.jsonl").string(),
                                  "--checkpoint", (m.dir / "checkpoint").string(),
                                  "--out",        out.string(),
                                  "--axis",       axis,
                                  "--values",     values,
                                  "--split",      "test",
                                  "--inference-steps", "20"};
    for (const char* k : {"n_shapes", "max_views", "views", "embed_dim", "d_model", "n_layers", "T", "warmup",
                          "batch_size"}) {
      std::string flag = std::string("--") + k;
      for (auto& ch : flag)
        if (ch == '_') ch = '-';
      args.push_back(flag);
      args.push_back(m.config.get(k));
    }
    args.push_back("--steps");
    args.push_back("2000");
    std::ostringstream so, se;
    const int code = run_cli(args, so, se);
    c.expect(code == 0, axis + " exit " + std::to_string(code) + " " + se.str());
    if (code != 0) continue;
    const std::string csv = read_file((out / ("ablate_" + axis + ".csv")).string());
    std::istringstream in(csv);
    int rows = 0;
    for (std::string line; std::getline(in, line);) {
      if (line.empty() || line[0] == '#' || line.rfind("axis,", 0) == 0) continue;
      ++rows;
      if (axis == "schedule" || axis == "pooling") {
        // axis,value,hash,bleu1,bleu2,bleu3,bleu4,...
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
        if (f.size() > 6) data += " " + f[1] + "=" + f[6];
      }
    }
    const int expected = static_cast<int>(std::count(values.begin(), values.end(), ',')) + 1;
    c.expect(rows == expected, axis + " rows");
  }
  return {c.ok(), c.summary() + "; BLEU@4 by schedule/pooling:" + data + ", " + fmt("%.0f s", seconds_since(t0))};
}

// ---------------------------------------------------------------- 10
Outcome persistence() {
  Checks c;
  const fs::path a = kWork / "persist_a", b = kWork / "persist_b";
  fs::remove_all(a);
  fs::remove_all(b);
  // Trained checkpoint when available, otherwise a freshly initialised one.
  Checkpoint ck;
  Vocabulary vocab;
  if (g_overfit) {
    ck = {g_overfit->model, g_overfit->train, g_overfit->state.params, g_overfit->state.adam,
          g_overfit->config.hash()};
    vocab = g_overfit->vocab;
  } else {
    const RunConfig rc = overfit_config();
    ck.model = rc.model(rc.grammar());
    ck.train = rc.train();
    ck.params = init_train_state(ck.model, ck.train).params;
    ck.config_hash = rc.hash();
    vocab = rc.grammar().vocabulary();
  }
  save_checkpoint(a.string(), ck, vocab);
  Vocabulary back_vocab;
  const Checkpoint back = load_checkpoint(a.string(), &back_vocab);
  save_checkpoint(b.string(), back, back_vocab);
  for (const char* f : {"params.bin", "manifest.json", "vocab.txt"})
    c.expect(read_file((a / f).string()) == read_file((b / f).string()), std::string(f) + " byte-identical");

  const CaptionGrammar g;
  CorpusOptions opt;
  opt.n_shapes = 64;
  opt.captions_per_shape = 2;
  const Corpus corpus = generate_corpus(opt, ViewSpec::standard(10), g, 11);
  const std::string text = corpus_jsonl(corpus, g);
  c.expect(corpus_jsonl(parse_corpus_jsonl(text, g), g) == text, "JSONL round trip");
  std::istringstream in(text);
  std::string first;
  std::getline(in, first);
  const auto j = nlohmann::ordered_json::parse(first);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  c.expect(keys == std::vector<std::string>{"shape_id", "category", "parts", "views", "captions", "split"},
           "key order");
  return {c.ok(), c.summary() + ", checkpoint " + std::to_string(fs::file_size(a / "params.bin")) + " bytes"};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  fs::create_directories(kWork);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"diffusion math", diffusion_math},       {"gradient check", gradient_check},
      {"rounding inverse", rounding_inverse},   {"MBR oracle", mbr_oracle},
      {"metric oracles", metric_oracles},       {"overfit run", overfit_run},
      {"multi-view trend", multiview_trend},    {"respacing fidelity", respacing_fidelity},
      {"ablation harness", ablation_harness},   {"persistence", persistence},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
