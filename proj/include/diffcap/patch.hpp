#pragma once

#include <vector>

namespace diffcap {

/// Ranges of the per-patch categorical features.
struct FeatureSpec {
  int n_parts = 0;
  int n_colors = 0;
  int n_materials = 0;
  int n_textures = 0;

  /// Length of the one-hot concatenation (part | color | material | texture | present).
  int width() const { return n_parts + n_colors + n_materials + n_textures + 1; }
  bool operator==(const FeatureSpec&) const = default;
};

struct Patch {
  int part = 0;
  int color = 0;
  int material = 0;
  int texture = 0;
  bool present = false;

  bool operator==(const Patch&) const = default;
};

/// G x G cells of symbolic patch features, row-major; the stand-in for a rendered view.
class ViewPatchGrid {
 public:
  ViewPatchGrid() = default;
  explicit ViewPatchGrid(int grid_size);

  int grid_size() const { return grid_size_; }
  int cell_count() const { return grid_size_ * grid_size_; }
  Patch& at(int row, int col) { return cells_.at(row * grid_size_ + col); }
  const Patch& at(int row, int col) const { return cells_.at(row * grid_size_ + col); }
  Patch& cell(int index) { return cells_.at(index); }
  const Patch& cell(int index) const { return cells_.at(index); }
  const std::vector<Patch>& cells() const { return cells_; }

  /// Throws std::out_of_range when an id exceeds its range or an absent cell
  /// carries non-zero ids.
  void validate(const FeatureSpec& spec) const;

  /// Active one-hot columns of cell `index` (empty for absent cells).
  std::vector<int> active_features(int index, const FeatureSpec& spec) const;

  bool operator==(const ViewPatchGrid&) const = default;

 private:
  int grid_size_ = 0;
  std::vector<Patch> cells_;
};

}  // namespace diffcap
