#include "diffcap/patch.hpp"

#include <stdexcept>
#include <string>

namespace diffcap {

ViewPatchGrid::ViewPatchGrid(int grid_size)
    : grid_size_(grid_size), cells_(static_cast<std::size_t>(grid_size) * grid_size) {
  if (grid_size < 1) throw std::invalid_argument("grid size must be positive");
}

void ViewPatchGrid::validate(const FeatureSpec& spec) const {
  for (int i = 0; i < cell_count(); ++i) {
    const Patch& p = cells_[i];
    if (!p.present) {
      if (p.part || p.color || p.material || p.texture)
        throw std::out_of_range("absent patch " + std::to_string(i) + " carries feature ids");
      continue;
    }
    if (p.part < 0 || p.part >= spec.n_parts || p.color < 0 || p.color >= spec.n_colors ||
        p.material < 0 || p.material >= spec.n_materials || p.texture < 0 ||
        p.texture >= spec.n_textures)
      throw std::out_of_range("patch " + std::to_string(i) + " has a feature id out of range");
  }
}

std::vector<int> ViewPatchGrid::active_features(int index, const FeatureSpec& spec) const {
  const Patch& p = cells_.at(index);
  if (!p.present) return {};
  int offset = 0;
  std::vector<int> cols;
  cols.push_back(offset + p.part);
  offset += spec.n_parts;
  cols.push_back(offset + p.color);
  offset += spec.n_colors;
  cols.push_back(offset + p.material);
  offset += spec.n_materials;
  cols.push_back(offset + p.texture);
  offset += spec.n_textures;
  cols.push_back(offset);
  return cols;
}

}  // namespace diffcap
