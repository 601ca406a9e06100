#include "diffcap/io.hpp"

#include "json.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace diffcap {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_f32(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  char b[4];
  std::memcpy(b, &u, 4);
  out.append(b, 4);
}

float get_f32(const char* p) {
  std::uint32_t u;
  std::memcpy(&u, p, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

json model_json(const DenoiserConfig& c) {
  json j;
  j["embed_dim"] = c.embed_dim;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["ff_mult"] = c.ff_mult;
  j["img_len"] = c.img_len;
  j["cap_len"] = c.cap_len;
  j["max_timestep"] = c.max_timestep;
  j["dropout"] = c.dropout;
  j["vocab_size"] = c.vocab_size;
  j["features"] = {c.features.n_parts, c.features.n_colors, c.features.n_materials, c.features.n_textures};
  return j;
}

DenoiserConfig model_from_json(const json& j) {
  DenoiserConfig c;
  c.embed_dim = j.at("embed_dim");
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.ff_mult = j.at("ff_mult");
  c.img_len = j.at("img_len");
  c.cap_len = j.at("cap_len");
  c.max_timestep = j.at("max_timestep");
  c.dropout = j.at("dropout");
  c.vocab_size = j.at("vocab_size");
  const auto& f = j.at("features");
  c.features = {f.at(0), f.at(1), f.at(2), f.at(3)};
  return c;
}

json train_json(const TrainConfig& t) {
  json j;
  j["schedule"] = to_string(t.schedule);
  j["T"] = t.steps_T;
  j["batch_size"] = t.batch_size;
  j["steps"] = t.optimizer_steps;
  j["lr"] = t.learning_rate;
  j["warmup"] = t.warmup_steps;
  j["reg_weight"] = t.reg_weight;
  j["ce_weight"] = t.ce_weight;
  j["grad_clip"] = t.grad_clip;
  j["clamp"] = t.clamp_enabled;
  j["freeze_embeddings"] = t.freeze_embeddings;
  j["seed"] = t.seed;
  return j;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.schedule = parse_schedule_kind(j.at("schedule").get<std::string>());
  t.steps_T = j.at("T");
  t.batch_size = j.at("batch_size");
  t.optimizer_steps = j.at("steps");
  t.learning_rate = j.at("lr");
  t.warmup_steps = j.at("warmup");
  t.reg_weight = j.at("reg_weight");
  t.ce_weight = j.at("ce_weight");
  t.grad_clip = j.at("grad_clip");
  t.clamp_enabled = j.at("clamp");
  t.freeze_embeddings = j.at("freeze_embeddings");
  t.seed = j.at("seed");
  return t;
}

TensorBundle to_bundle(const DenoiserParams<float>& p, const std::string& prefix = "") {
  TensorBundle b;
  p.visit([&](const std::string& name, const MatrixXf& m) { b.emplace_back(prefix + name, m); });
  return b;
}

void from_bundle(DenoiserParams<float>& p, const TensorBundle& b, const std::string& prefix = "") {
  p.visit([&](const std::string& name, MatrixXf& m) {
    for (const auto& [n, t] : b)
      if (n == prefix + name) {
        if (t.rows() != m.rows() || t.cols() != m.cols())
          throw std::invalid_argument("tensor " + n + " has the wrong shape");
        m = t;
        return;
      }
    throw std::invalid_argument("checkpoint lacks tensor " + prefix + name);
  });
}

DenoiserParams<float> shaped_params(const DenoiserConfig& c) {
  Rng rng(0);
  return init_params<float>(c, rng);
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename " + tmp + " to " + path);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string encode_blob(const TensorBundle& bundle) {
  std::string out;
  for (const auto& [name, m] : bundle)
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f32(out, m.data()[i]);
  return out;
}

void save_bundle(const std::string& manifest_path, const std::string& blob_name, const TensorBundle& bundle,
                 const std::string& extra_json) {
  json manifest = json::parse(extra_json);
  manifest["blob"] = blob_name;
  manifest["tensors"] = json::array();
  std::size_t offset = 0;
  for (const auto& [name, m] : bundle) {
    json t;
    t["name"] = name;
    t["shape"] = {m.rows(), m.cols()};
    t["dtype"] = "f32";
    t["offset"] = offset;
    manifest["tensors"].push_back(t);
    offset += static_cast<std::size_t>(m.size()) * 4;
  }
  const fs::path dir = fs::path(manifest_path).parent_path();
  write_file_atomic((dir / blob_name).string(), encode_blob(bundle));
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
}

TensorBundle load_bundle(const std::string& manifest_path, std::string* extra_json) {
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed manifest " + manifest_path + ": " + e.what());
  }
  const fs::path dir = fs::path(manifest_path).parent_path();
  const std::string blob = read_file((dir / manifest.at("blob").get<std::string>()).string());
  TensorBundle bundle;
  for (const auto& t : manifest.at("tensors")) {
    if (t.at("dtype") != "f32") throw std::invalid_argument("unsupported dtype in manifest");
    const auto shape = t.at("shape").get<std::vector<long>>();
    long rows = 1, cols = 1;
    if (shape.size() == 1) {
      cols = shape[0];
    } else if (shape.size() == 2) {
      rows = shape[0];
      cols = shape[1];
    } else {
      throw std::invalid_argument("tensors must be rank 1 or 2");
    }
    const std::size_t offset = t.at("offset");
    if (offset + static_cast<std::size_t>(rows * cols) * 4 > blob.size())
      throw std::invalid_argument("tensor " + t.at("name").get<std::string>() + " exceeds the blob");
    MatrixXf m(rows, cols);
    for (long i = 0; i < rows * cols; ++i) m.data()[i] = get_f32(blob.data() + offset + i * 4);
    bundle.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  if (extra_json) {
    json extra = manifest;
    extra.erase("blob");
    extra.erase("tensors");
    *extra_json = extra.dump();
  }
  return bundle;
}

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt, const Vocabulary& vocab) {
  check_params(ckpt.params, ckpt.model);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir);
  json extra;
  extra["format"] = "diffcap-checkpoint";
  extra["version"] = 1;
  extra["config_hash"] = ckpt.config_hash;
  extra["model"] = model_json(ckpt.model);
  extra["train"] = train_json(ckpt.train);
  extra["schedule"] = {{"kind", to_string(ckpt.train.schedule)}, {"T", ckpt.train.steps_T}};
  extra["step"] = ckpt.adam ? ckpt.adam->step : 0;
  TensorBundle bundle = to_bundle(ckpt.params);
  if (ckpt.adam) {
    for (auto& t : to_bundle(ckpt.adam->m, "adam.m.")) bundle.push_back(std::move(t));
    for (auto& t : to_bundle(ckpt.adam->v, "adam.v.")) bundle.push_back(std::move(t));
  }
  std::ostringstream v;
  for (const auto& t : vocab.tokens()) v << t << '\n';
  write_file_atomic((fs::path(dir) / "vocab.txt").string(), v.str());
  save_bundle((fs::path(dir) / "manifest.json").string(), "params.bin", bundle, extra.dump());
}

Checkpoint load_checkpoint(const std::string& dir, Vocabulary* vocab) {
  std::string extra_text;
  const TensorBundle bundle = load_bundle((fs::path(dir) / "manifest.json").string(), &extra_text);
  const json extra = json::parse(extra_text);
  if (extra.value("format", "") != "diffcap-checkpoint") throw std::invalid_argument(dir + " is not a checkpoint");
  Checkpoint ck;
  ck.model = model_from_json(extra.at("model"));
  ck.train = train_from_json(extra.at("train"));
  ck.config_hash = extra.value("config_hash", "");
  ck.params = shaped_params(ck.model);
  from_bundle(ck.params, bundle);
  check_params(ck.params, ck.model);
  const bool has_adam = std::any_of(bundle.begin(), bundle.end(),
                                    [](const auto& t) { return t.first.rfind("adam.m.", 0) == 0; });
  if (has_adam) {
    AdamState<float> a = make_adam_state(ck.params);
    from_bundle(a.m, bundle, "adam.m.");
    from_bundle(a.v, bundle, "adam.v.");
    a.step = extra.at("step");
    ck.adam = std::move(a);
  }
  if (vocab) *vocab = Vocabulary::load((fs::path(dir) / "vocab.txt").string());
  return ck;
}

std::string checkpoint_hash(const std::string& dir) {
  return hex64(fnv1a64(read_file((fs::path(dir) / "params.bin").string())));
}

int import_embeddings(const std::string& manifest_path, const Vocabulary& vocab, const Vocabulary* import_vocab,
                      EmbeddingTable<float>& table, bool project, std::uint64_t seed) {
  const TensorBundle bundle = load_bundle(manifest_path);
  const MatrixXf* tokens = nullptr;
  const MatrixXf* patches = nullptr;
  for (const auto& [name, m] : bundle) {
    if (name == "token_embedding") tokens = &m;
    if (name == "patch_projector") patches = &m;
  }
  if (!tokens) throw std::invalid_argument("imported bundle lacks token_embedding");
  const Eigen::Index width = tokens->cols();
  MatrixXf proj;
  if (width != table.dim()) {
    if (!project)
      throw std::invalid_argument("imported width " + std::to_string(width) + " differs from H = " +
                                  std::to_string(table.dim()));
    Rng rng(seed);
    proj = random_normal<float>(width, table.dim(), rng) / std::sqrt(static_cast<float>(width));
  }
  auto map_row = [&](const auto& row) -> RowVector<float> {
    if (proj.size()) return row * proj;
    return row;
  };
  int imported = 0;
  for (int id = 0; id < vocab.size(); ++id) {
    int src = id;
    if (import_vocab) {
      if (!import_vocab->contains(vocab.token(id))) continue;
      src = import_vocab->id(vocab.token(id));
    }
    if (src >= tokens->rows()) continue;
    table.tokens.row(id) = map_row(tokens->row(src));
    ++imported;
  }
  if (patches) {
    if (patches->rows() != table.patch_projector.rows())
      throw std::invalid_argument("imported patch_projector has the wrong row count");
    for (Eigen::Index r = 0; r < patches->rows(); ++r) table.patch_projector.row(r) = map_row(patches->row(r));
  }
  return imported;
}

}  // namespace diffcap
