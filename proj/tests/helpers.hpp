#pragma once

#include "diffcap/denoiser.hpp"
#include "diffcap/patch.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline diffcap::FeatureSpec small_features() { return {3, 2, 2, 2}; }

/// Tiny config for exhaustive and finite-difference checks.
inline diffcap::DenoiserConfig tiny_config() {
  diffcap::DenoiserConfig c;
  c.embed_dim = 4;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ff_mult = 2;
  c.img_len = 4;
  c.cap_len = 5;
  c.max_timestep = 50;
  c.vocab_size = 8;
  c.features = small_features();
  return c;
}

inline diffcap::ViewPatchGrid random_view(int grid, const diffcap::FeatureSpec& f, std::mt19937_64& rng) {
  diffcap::ViewPatchGrid v(grid);
  for (int i = 0; i < v.cell_count(); ++i) {
    if (std::bernoulli_distribution(0.3)(rng)) continue;
    auto& p = v.cell(i);
    p.present = true;
    p.part = std::uniform_int_distribution<int>(0, f.n_parts - 1)(rng);
    p.color = std::uniform_int_distribution<int>(0, f.n_colors - 1)(rng);
    p.material = std::uniform_int_distribution<int>(0, f.n_materials - 1)(rng);
    p.texture = std::uniform_int_distribution<int>(0, f.n_textures - 1)(rng);
  }
  return v;
}

inline std::vector<int> random_caption(int len, int vocab, std::mt19937_64& rng) {
  std::vector<int> c(len);
  for (auto& x : c) x = std::uniform_int_distribution<int>(0, vocab - 1)(rng);
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("diffcap_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace testing
