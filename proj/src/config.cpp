#include "diffcap/config.hpp"

#include "diffcap/io.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

namespace diffcap {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"dataset", "", "corpus JSONL path"},
      {"checkpoint", "", "checkpoint directory"},
      {"out", "", "output directory"},
      {"seed", "0", "master seed"},
      // corpus
      {"n_shapes", "32", "shapes to generate"},
      {"train_fraction", "0.8", "share of shape ids hashed into the train split"},
      {"captions_per_shape", "1", "caption variants per shape"},
      {"max_views", "10", "viewpoints rendered per shape"},
      // model
      {"embed_dim", "128", "H, joint embedding width"},
      {"d_model", "128", "transformer width"},
      {"n_layers", "4", "transformer layers"},
      {"n_heads", "4", "attention heads"},
      {"ff_mult", "4", "feed-forward width multiplier"},
      {"dropout", "0", "residual dropout rate"},
      {"max_timestep", "2000", "largest timestep the model accepts"},
      // training
      {"schedule", "sqrt", "sqrt, linear or cosine"},
      {"T", "2000", "diffusion steps"},
      {"batch_size", "16", "examples per optimizer step"},
      {"steps", "1000", "optimizer steps"},
      {"stop_at", "0", "end the run after this step (resumable), 0 runs to steps"},
      {"lr", "0.001", "peak learning rate"},
      {"warmup", "200", "linear warmup steps"},
      {"reg_weight", "0.001", "weight of the embedding norm term"},
      {"ce_weight", "1", "weight of the rounding cross-entropy"},
      {"grad_clip", "1", "global gradient norm clip, 0 disables"},
      {"freeze_embeddings", "false", "keep token rows and patch projector fixed"},
      {"import_embeddings", "", "manifest of pretrained token rows"},
      {"import_vocab", "", "vocabulary file matching the imported rows"},
      {"import_project", "false", "project imported rows when their width differs from H"},
      // decoding
      {"views", "10", "V, views aggregated per shape"},
      {"samples", "5", "S, MBR candidates per view"},
      {"pooling", "max", "max, mean or stochastic"},
      {"clamp", "true", "clamp x0 predictions to embedded tokens"},
      {"inference_steps", "200", "K, respaced sampling steps; 0 or T means full"},
      {"split", "test", "train, test or all"},
      {"timings", "true", "include wall-clock timings in caption output"},
  };
  return keys;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.fallback;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + " lacks '='");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return parse(read_file(path)); }

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

long RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::invalid_argument("config key " + key + " needs an integer, got '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size())
    throw std::invalid_argument("config key " + key + " needs a number, got '" + s + "'");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("config key " + key + " needs true or false, got '" + s + "'");
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  // Paths and the stop point do not change what a run computes.
  static const std::set<std::string> excluded{"dataset", "checkpoint", "out", "stop_at"};
  std::string text;
  for (const auto& [k, v] : values_)
    if (!excluded.count(k)) text += k + "=" + v + "\n";
  return hex64(fnv1a64(text));
}

void RunConfig::validate() const {
  train().validate();
  // K <= T is checked against the checkpoint's T when sampling.
  if (get_int("inference_steps") < 0) throw std::invalid_argument("inference_steps must be non-negative");
  if (get_int("views") < 1 || get_int("max_views") < 1) throw std::invalid_argument("view counts must be positive");
  if (get_int("samples") < 1) throw std::invalid_argument("samples must be positive");
  parse_pooling(get("pooling"));
  const std::string& split = get("split");
  if (split != "train" && split != "test" && split != "all")
    throw std::invalid_argument("split must be train, test or all");
  corpus();
  get_bool("timings");
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.schedule = parse_schedule_kind(get("schedule"));
  t.steps_T = static_cast<int>(get_int("T"));
  t.batch_size = static_cast<int>(get_int("batch_size"));
  t.optimizer_steps = get_int("steps");
  t.learning_rate = get_double("lr");
  t.warmup_steps = get_int("warmup");
  t.reg_weight = get_double("reg_weight");
  t.ce_weight = get_double("ce_weight");
  t.grad_clip = get_double("grad_clip");
  t.clamp_enabled = get_bool("clamp");
  t.freeze_embeddings = get_bool("freeze_embeddings");
  t.seed = static_cast<std::uint64_t>(get_int("seed"));
  return t;
}

DenoiserConfig RunConfig::model(const CaptionGrammar& grammar) const {
  DenoiserConfig c;
  c.embed_dim = static_cast<int>(get_int("embed_dim"));
  c.d_model = static_cast<int>(get_int("d_model"));
  c.n_layers = static_cast<int>(get_int("n_layers"));
  c.n_heads = static_cast<int>(get_int("n_heads"));
  c.ff_mult = static_cast<int>(get_int("ff_mult"));
  c.dropout = get_double("dropout");
  c.max_timestep = static_cast<int>(std::max(get_int("max_timestep"), get_int("T")));
  c.img_len = kGridSize * kGridSize;
  c.cap_len = grammar.max_length;
  c.vocab_size = grammar.vocabulary().size();
  c.features = grammar.features();
  c.validate();
  return c;
}

DecodeOptions RunConfig::decode() const {
  DecodeOptions d;
  d.samples = static_cast<int>(get_int("samples"));
  d.pooling = parse_pooling(get("pooling"));
  d.clamp = get_bool("clamp");
  d.seed = static_cast<std::uint64_t>(get_int("seed"));
  return d;
}

CorpusOptions RunConfig::corpus() const {
  CorpusOptions o;
  o.n_shapes = static_cast<int>(get_int("n_shapes"));
  o.train_fraction = get_double("train_fraction");
  o.captions_per_shape = static_cast<int>(get_int("captions_per_shape"));
  if (o.n_shapes < 1) throw std::invalid_argument("n_shapes must be positive");
  if (!(o.train_fraction >= 0.0 && o.train_fraction <= 1.0))
    throw std::invalid_argument("train_fraction must lie in [0, 1]");
  if (o.captions_per_shape < 1) throw std::invalid_argument("captions_per_shape must be positive");
  return o;
}

CaptionGrammar RunConfig::grammar() const {
  return CaptionGrammar{};
}

}  // namespace diffcap
