#pragma once

#include "diffcap/denoiser.hpp"
#include "diffcap/diffusion.hpp"
#include "diffcap/train.hpp"
#include "diffcap/vocab.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace diffcap {

/// Named f32 tensors in a fixed order.
using TensorBundle = std::vector<std::pair<std::string, MatrixXf>>;

/// Write bytes to `path` through a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

/// Row-major little-endian f32 blob of every tensor, back to back.
std::string encode_blob(const TensorBundle& bundle);

/// Manifest JSON: `extra` fields first, then "blob" and "tensors"
/// ([{name, shape, dtype: "f32", offset}]). The blob lives next to the manifest.
void save_bundle(const std::string& manifest_path, const std::string& blob_name, const TensorBundle& bundle,
                 const std::string& extra_json = "{}");
TensorBundle load_bundle(const std::string& manifest_path, std::string* extra_json = nullptr);

struct Checkpoint {
  DenoiserConfig model;
  TrainConfig train;
  DenoiserParams<float> params;
  std::optional<AdamState<float>> adam;
  std::string config_hash;
};

/// Directory layout: manifest.json, params.bin, vocab.txt.
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt, const Vocabulary& vocab);
Checkpoint load_checkpoint(const std::string& dir, Vocabulary* vocab = nullptr);
std::string checkpoint_hash(const std::string& dir);

/// Replace token rows (and the patch projector when present) from an imported
/// bundle with tensors "token_embedding" [V' x H'] and optional
/// "patch_projector" [P x H']. With `import_vocab`, rows are matched by token
/// string; otherwise by id. When H' != H and `project` is set, rows pass
/// through a fixed Gaussian projection H' -> H (seeded by `seed`); otherwise a
/// width mismatch is an error. Returns the number of token rows imported.
int import_embeddings(const std::string& manifest_path, const Vocabulary& vocab, const Vocabulary* import_vocab,
                      EmbeddingTable<float>& table, bool project, std::uint64_t seed);

}  // namespace diffcap
