#include "diffcap/cli.hpp"

#include "diffcap/config.hpp"
#include "diffcap/io.hpp"
#include "diffcap/pipeline.hpp"
#include "diffcap/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

namespace diffcap {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Args {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> flag value
  std::map<std::string, CLI::Option*> options;

  // command-specific
  std::string resume;
  std::string shape;
  std::string drop_part;
  std::string mix_with;
  std::string mix_part;
  std::vector<std::string> axes;
  std::string values;
  bool oracle = false;
  int respace = 0;
};

std::string flag_name(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return "--" + key;
}

void add_common(CLI::App* app, Args& a) {
  app->add_option("--config", a.config_path, "key=value config file");
  app->add_option("--set", a.sets, "override one config key (key=value)");
  for (const auto& k : config_keys())
    a.options[k.name] = app->add_option(flag_name(k.name), a.flags[k.name], k.help);
}

RunConfig resolve(const Args& a) {
  RunConfig cfg = a.config_path.empty() ? RunConfig() : RunConfig::load(a.config_path);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [key, opt] : a.options)
    if (opt->count()) cfg.set(key, a.flags.at(key));
  cfg.validate();
  return cfg;
}

fs::path out_dir(const RunConfig& cfg) {
  const std::string& out = cfg.get("out");
  if (out.empty()) throw std::invalid_argument("--out is required");
  if (!fs::is_directory(out)) throw IoError("output directory " + out + " does not exist");
  return fs::path(out);
}

std::string provenance(const RunConfig& cfg) {
  return "config_hash=" + cfg.hash() + " seed=" + cfg.get("seed");
}

Corpus load_corpus(const RunConfig& cfg, const CaptionGrammar& grammar) {
  const std::string& path = cfg.get("dataset");
  if (path.empty()) throw std::invalid_argument("--dataset is required");
  return parse_corpus_jsonl(read_file(path), grammar);
}

std::vector<const ShapeRecord*> split_records(const Corpus& corpus, const std::string& split) {
  auto recs = corpus.split(split);
  if (recs.empty()) throw std::invalid_argument("split '" + split + "' is empty");
  return recs;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const CaptionGrammar grammar = cfg.grammar();
  const ViewSpec views = ViewSpec::standard(static_cast<int>(cfg.get_int("max_views")));
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  const Corpus corpus = generate_corpus(cfg.corpus(), views, grammar, seed);

  json manifest;
  manifest["config_hash"] = cfg.hash();
  manifest["seed"] = seed;
  manifest["grammar_hash"] = hex64(grammar.hash());
  manifest["counts"] = {{"shapes", corpus.records.size()},
                        {"train", corpus.split("train").size()},
                        {"test", corpus.split("test").size()},
                        {"views", views.count()},
                        {"captions_per_shape", cfg.get_int("captions_per_shape")}};
  write_file_atomic((dir / "corpus.jsonl").string(), corpus_jsonl(corpus, grammar));
  write_file_atomic((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  out << "wrote " << corpus.records.size() << " shapes to " << (dir / "corpus.jsonl").string() << "\n";
  return kExitOk;
}

Checkpoint train_run(const RunConfig& cfg, const Corpus& corpus, const CaptionGrammar& grammar,
                     const Vocabulary& vocab, const std::string& resume, const fs::path& dir,
                     std::ostream& out) {
  Checkpoint ck;
  TrainState state;
  if (!resume.empty()) {
    ck = load_checkpoint((fs::path(resume) / "checkpoint").string());
    if (!ck.adam) throw std::invalid_argument("checkpoint in " + resume + " has no optimizer state");
    ck.train.optimizer_steps = cfg.get_int("steps");
    state.params = ck.params;
    state.adam = *ck.adam;
    const fs::path curve = fs::path(resume) / "curve.csv";
    if (fs::exists(curve)) state.curve = parse_curve_csv(read_file(curve.string()));
    while (!state.curve.empty() && state.curve.back().step > state.adam.step) state.curve.pop_back();
  } else {
    ck.model = cfg.model(grammar);
    ck.train = cfg.train();
    ck.config_hash = cfg.hash();
    state = init_train_state(ck.model, ck.train);
    if (!cfg.get("import_embeddings").empty()) {
      Vocabulary import_vocab;
      const bool by_token = !cfg.get("import_vocab").empty();
      if (by_token) import_vocab = Vocabulary::load(cfg.get("import_vocab"));
      const int n = import_embeddings(cfg.get("import_embeddings"), vocab, by_token ? &import_vocab : nullptr,
                                      state.params.embedding, cfg.get_bool("import_project"),
                                      derive_seed(ck.train.seed, 0x1e9));
      out << "imported " << n << " token rows\n";
    }
  }

  const auto records = split_records(corpus, "train");
  const auto pairs = training_pairs(records, vocab, static_cast<int>(cfg.get_int("views")), ck.model.cap_len);
  const long every = std::max<long>(1, ck.train.optimizer_steps / 20);
  train(state, pairs, ck.model, ck.train,
        [&](const CurveRow& r) {
          if (r.step % every == 0)
            out << "step " << r.step << " loss " << r.loss.total << " avg " << r.moving_average << "\n";
        },
        cfg.get_int("stop_at"));

  ck.params = state.params;
  ck.adam = state.adam;
  save_checkpoint((dir / "checkpoint").string(), ck, vocab);
  write_file_atomic((dir / "curve.csv").string(), curve_csv(state.curve, provenance(cfg)));
  return ck;
}

int cmd_train(const RunConfig& cfg, const Args& a, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const CaptionGrammar grammar = cfg.grammar();
  const Vocabulary vocab = grammar.vocabulary();
  const Corpus corpus = load_corpus(cfg, grammar);
  write_file_atomic((dir / "config.txt").string(), "# " + provenance(cfg) + "\n" + cfg.dump());
  const Checkpoint ck = train_run(cfg, corpus, grammar, vocab, a.resume, dir, out);
  out << "checkpoint at step " << ck.adam->step << " in " << (dir / "checkpoint").string() << "\n";
  return kExitOk;
}

struct Loaded {
  Checkpoint ck;
  Vocabulary vocab;
  NoiseSchedule schedule;
};

Loaded load_model(const RunConfig& cfg) {
  const std::string& path = cfg.get("checkpoint");
  if (path.empty()) throw std::invalid_argument("--checkpoint is required");
  Vocabulary vocab;
  Checkpoint ck = load_checkpoint(path, &vocab);
  const int K = static_cast<int>(cfg.get_int("inference_steps"));
  if (K > ck.train.steps_T)
    throw std::invalid_argument("inference_steps exceeds the checkpoint's T = " + std::to_string(ck.train.steps_T));
  NoiseSchedule schedule = inference_schedule(ck.train.schedule, ck.train.steps_T, K);
  return Loaded{std::move(ck), std::move(vocab), std::move(schedule)};
}

json caption_json(const ShapeCaption& sc, const ShapeRecord& rec, const Vocabulary& vocab, bool timings) {
  json j;
  j["shape_id"] = sc.shape_id;
  j["views"] = json::array();
  for (std::size_t v = 0; v < sc.result.candidate_sets.size(); ++v) {
    const auto& set = sc.result.candidate_sets[v];
    const auto& sel = sc.result.selections[v];
    json jv;
    jv["view"] = set.view_index;
    jv["candidates"] = json::array();
    for (std::size_t i = 0; i < set.candidates.size(); ++i)
      jv["candidates"].push_back({{"caption", vocab.join(set.candidates[i].tokens)}, {"risk", sel.risks[i]}});
    jv["selected"] = sel.index;
    j["views"].push_back(jv);
  }
  std::string caption;
  for (const auto& w : sc.caption) caption += (caption.empty() ? "" : " ") + w;
  j["caption"] = caption;
  j["references"] = json::array();
  for (const auto& r : rec.captions) {
    std::string s;
    for (const auto& w : r) s += (s.empty() ? "" : " ") + w;
    j["references"].push_back(s);
  }
  if (timings) j["timings"] = {{"total_ms", sc.total_ms}};
  return j;
}

int cmd_caption(const RunConfig& cfg, const Args& a, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const CaptionGrammar grammar = cfg.grammar();
  const Loaded m = load_model(cfg);
  const Corpus corpus = load_corpus(cfg, grammar);
  std::vector<const ShapeRecord*> records;
  if (!a.shape.empty()) {
    const ShapeRecord* r = corpus.find(a.shape);
    if (!r) throw std::invalid_argument("unknown shape id '" + a.shape + "'");
    records.push_back(r);
  } else {
    records = split_records(corpus, cfg.get("split"));
  }

  ViewEdit edit;
  if (!a.drop_part.empty() || !a.mix_with.empty()) {
    std::optional<PartKind> drop;
    if (!a.drop_part.empty()) drop = parse_part_kind(a.drop_part);
    const ShapeRecord* donor = nullptr;
    std::optional<PartKind> mix;
    if (!a.mix_with.empty()) {
      donor = corpus.find(a.mix_with);
      if (!donor) throw std::invalid_argument("unknown shape id '" + a.mix_with + "'");
      if (a.mix_part.empty()) throw std::invalid_argument("--mix-with needs --mix-part");
      mix = parse_part_kind(a.mix_part);
    }
    edit = [=](const ViewPatchGrid& g, int v) {
      ViewPatchGrid r = g;
      if (mix) r = mix_patches(r, donor->views.at(v), *mix);
      if (drop) r = drop_patches(r, *drop);
      return r;
    };
  }

  const int V = static_cast<int>(cfg.get_int("views"));
  const DecodeOptions opt = cfg.decode();
  const bool timings = cfg.get_bool("timings");
  json doc;
  doc["config_hash"] = cfg.hash();
  doc["seed"] = opt.seed;
  doc["checkpoint_hash"] = checkpoint_hash(cfg.get("checkpoint"));
  doc["records"] = json::array();
  for (const ShapeRecord* r : records) {
    const ShapeCaption sc = caption_record(m.ck.params, m.ck.model, m.vocab, *r, V, m.schedule, opt, edit);
    doc["records"].push_back(caption_json(sc, *r, m.vocab, timings));
    out << sc.shape_id << ": " << doc["records"].back()["caption"].get<std::string>() << "\n";
  }
  write_file_atomic((dir / "captions.json").string(), doc.dump(2) + "\n");
  return kExitOk;
}

void write_report(const fs::path& dir, const std::string& stem, const MetricsReport& report, const RunConfig& cfg) {
  write_file_atomic((dir / (stem + ".json")).string(),
                    report_json(report, cfg.hash(), static_cast<std::uint64_t>(cfg.get_int("seed"))));
  write_file_atomic((dir / (stem + ".csv")).string(), "# " + provenance(cfg) + "\n" + report_csv(report));
}

int cmd_eval(const RunConfig& cfg, const Args& a, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const CaptionGrammar grammar = cfg.grammar();
  const Corpus corpus = load_corpus(cfg, grammar);
  const auto records = split_records(corpus, cfg.get("split"));
  MetricsReport report;
  if (a.oracle) {
    report = evaluate_records(DenoiserParams<float>{}, DenoiserConfig{}, grammar.vocabulary(), records, 1,
                              build_schedule(ScheduleKind::Sqrt, 1), cfg.decode(), true);
  } else {
    const Loaded m = load_model(cfg);
    report = evaluate_records(m.ck.params, m.ck.model, m.vocab, records, static_cast<int>(cfg.get_int("views")),
                              m.schedule, cfg.decode());
  }
  write_report(dir, "metrics", report, cfg);
  for (const auto& [k, v] : report.corpus) out << k << " " << v << "\n";
  for (const auto& w : report.warnings) out << "warning: " << w << "\n";
  return kExitOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_ablate(const RunConfig& cfg, const Args& a, std::ostream& out) {
  std::vector<std::string> axes;
  for (const auto& x : a.axes)
    for (const auto& y : split_list(x)) axes.push_back(y);
  if (axes.size() != 1) throw std::invalid_argument("ablate sweeps exactly one axis");
  const std::string axis = axes.front();
  static const std::map<std::string, std::string> keys{
      {"V", "views"}, {"H", "embed_dim"}, {"S", "samples"}, {"schedule", "schedule"}, {"pooling", "pooling"}};
  const auto key = keys.find(axis);
  if (key == keys.end()) throw std::invalid_argument("unknown axis '" + axis + "' (V, H, S, schedule, pooling)");
  const auto values = split_list(a.values);
  if (values.empty()) throw std::invalid_argument("--values is empty");
  const bool retrain = axis == "H" || axis == "schedule";

  const fs::path dir = out_dir(cfg);
  const CaptionGrammar grammar = cfg.grammar();
  const Corpus corpus = load_corpus(cfg, grammar);
  const auto records = split_records(corpus, cfg.get("split"));

  // Validate every value before any work.
  std::vector<RunConfig> runs;
  for (const auto& v : values) {
    RunConfig c = cfg;
    c.set(key->second, v);
    c.validate();
    runs.push_back(c);
  }

  std::ostringstream csv;
  csv << "# " << provenance(cfg) << " axis=" << axis << "\n";
  csv << "axis,value,checkpoint_hash";
  const char* metrics[] = {"bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider", "distinct_1", "distinct_2",
                           "exact_match"};
  for (const char* mname : metrics) csv << "," << mname;
  csv << "\n";

  for (std::size_t i = 0; i < runs.size(); ++i) {
    RunConfig run = runs[i];
    if (retrain) {
      const fs::path sub = dir / ("ablate_" + axis + "_" + values[i]);
      fs::create_directories(sub);
      out << "training " << axis << "=" << values[i] << "\n";
      train_run(run, corpus, grammar, grammar.vocabulary(), "", sub, out);
      run.set("checkpoint", (sub / "checkpoint").string());
    }
    const Loaded m = load_model(run);
    const MetricsReport report = evaluate_records(m.ck.params, m.ck.model, m.vocab, records,
                                                  static_cast<int>(run.get_int("views")), m.schedule,
                                                  run.decode());
    const std::string hash = checkpoint_hash(run.get("checkpoint"));
    csv << axis << "," << values[i] << "," << hash;
    char buf[64];
    for (const char* mname : metrics) {
      std::snprintf(buf, sizeof buf, ",%.6f", report.get(mname));
      csv << buf;
    }
    csv << "\n";
    out << axis << "=" << values[i] << " bleu4 " << report.get("bleu4") << "\n";
  }
  write_file_atomic((dir / ("ablate_" + axis + ".csv")).string(), csv.str());
  return kExitOk;
}

int cmd_inspect_schedule(const RunConfig& cfg, const Args& a, std::ostream& out) {
  const fs::path dir = out_dir(cfg);
  const ScheduleKind kind = parse_schedule_kind(cfg.get("schedule"));
  const int T = static_cast<int>(cfg.get_int("T"));
  NoiseSchedule s = build_schedule(kind, T);
  if (a.respace < 0 || a.respace > T) throw std::invalid_argument("--respace must lie in [0, T]");
  if (a.respace > 0) s = respace(s, a.respace);
  for (const auto& w : s.validate()) out << "warning: " << w << "\n";

  std::ostringstream csv;
  csv << "# " << provenance(cfg) << "\n";
  csv << "t,beta,alpha_bar,c_xt,c_x0,var" << (s.respaced() ? ",timestep" : "") << "\n";
  char buf[256];
  for (int t = 1; t <= s.steps(); ++t) {
    const PosteriorCoeffs pc = posterior_coeffs(s, t);
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g", t, s.beta(t), s.alpha_bar(t), pc.c_xt,
                  pc.c_x0, pc.var);
    csv << buf;
    if (s.respaced()) csv << "," << s.model_timestep(t);
    csv << "\n";
  }
  write_file_atomic((dir / "schedule.csv").string(), csv.str());
  out << "wrote " << s.steps() << " rows\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-view shape captioning with partial-noising diffusion", "diffcap"};
  app.require_subcommand(1);
  Args a;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  auto* trn = app.add_subcommand("train", "train a denoiser");
  auto* cap = app.add_subcommand("caption", "caption shapes");
  auto* evl = app.add_subcommand("eval", "caption a split and score it");
  auto* abl = app.add_subcommand("ablate", "sweep one axis");
  auto* ins = app.add_subcommand("inspect-schedule", "dump a noise schedule");
  for (auto* sub : {gen, trn, cap, evl, abl, ins}) add_common(sub, a);
  // Each subcommand owns its Option objects, so rebind the key table on parse.
  std::map<CLI::App*, std::map<std::string, CLI::Option*>> per_sub;
  for (auto* sub : {gen, trn, cap, evl, abl, ins})
    for (const auto& k : config_keys()) per_sub[sub][k.name] = sub->get_option(flag_name(k.name));

  trn->add_option("--resume", a.resume, "previous train output directory");
  cap->add_option("--shape", a.shape, "caption a single shape id");
  cap->add_option("--drop-part", a.drop_part, "remove a part kind from every view");
  cap->add_option("--mix-with", a.mix_with, "donor shape id for part mixing");
  cap->add_option("--mix-part", a.mix_part, "part kind taken from the donor");
  evl->add_flag("--oracle", a.oracle, "score the references against themselves");
  abl->add_option("--axis", a.axes, "V, H, S, schedule or pooling");
  abl->add_option("--values", a.values, "comma-separated values")->required();
  ins->add_option("--respace", a.respace, "respaced step count, 0 keeps every step");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    a.options = per_sub[sub];
    const RunConfig cfg = resolve(a);
    if (sub == gen) return cmd_gen_data(cfg, out);
    if (sub == trn) return cmd_train(cfg, a, out);
    if (sub == cap) return cmd_caption(cfg, a, out);
    if (sub == evl) return cmd_eval(cfg, a, out);
    if (sub == abl) return cmd_ablate(cfg, a, out);
    return cmd_inspect_schedule(cfg, a, out);
  } catch (const NumericalFault& e) {
    err << "error: " << e.what() << " (step " << e.index() << ")\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::logic_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace diffcap
