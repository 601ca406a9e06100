#pragma once

#include "diffcap/patch.hpp"
#include "diffcap/vocab.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace diffcap {

enum class Category { Chair, Table, Lamp, Cart };
enum class PartKind { Back, Seat, Leg, Top, Drawer, Shade, Stem, Base, Handle, Wheel };

inline constexpr int kCategoryCount = 4;
inline constexpr int kPartKindCount = 10;

std::string to_string(Category c);
std::string to_string(PartKind k);
Category parse_category(std::string_view s);
PartKind parse_part_kind(std::string_view s);  // throws std::invalid_argument

/// Part kinds of a category, in caption order.
const std::vector<PartKind>& category_parts(Category c);

/// Grid cells (row-major indices) a part occupies in a 4x4 view, optionally mirrored.
std::vector<int> layout_cells(Category c, PartKind k, bool mirrored);

inline constexpr int kGridSize = 4;

struct Part {
  PartKind kind;
  int color = 0;
  int material = 0;
  int texture = 0;
  bool operator==(const Part&) const = default;
};

struct ShapeSpec {
  std::string shape_id;
  Category category = Category::Chair;
  std::vector<Part> parts;

  /// Rejects illegal or duplicate part kinds and overlapping layouts.
  void validate() const;
  bool operator==(const ShapeSpec&) const = default;
};

struct Viewpoint {
  int elevation_deg = 0;  // one of -30, 0, +30
  bool mirrored = false;
  std::vector<PartKind> hidden;
};

struct ViewSpec {
  std::vector<Viewpoint> views;

  int count() const { return static_cast<int>(views.size()); }
  /// Throws unless every part kind is visible from at least one viewpoint.
  void validate() const;

  /// V viewpoints cycling elevations (-30, 0, +30), mirrored on odd indices.
  /// With V >= 2, view 0 (low) sees only ground-contact parts (legs, base,
  /// wheels) and view 9 (when present) hides them; all others see everything.
  static ViewSpec standard(int count);
};

/// Templates and lexicons for the procedural captions:
///   "a <texture> <category> with <c> <m> <part> , <c> <m> <part> and <c> <m> <part>"
/// Variant k rotates the part order by k.
struct CaptionGrammar {
  std::vector<std::string> colors{"red", "blue", "green", "black", "white", "brown", "gray", "yellow"};
  std::vector<std::string> materials{"wood", "metal", "plastic", "fabric", "leather"};
  std::vector<std::string> textures{"plain", "striped", "glossy", "matte"};
  int max_length = 18;  // L_cap including BOS/EOS
  std::uint64_t seed = 0;

  FeatureSpec features() const;
  Vocabulary vocabulary() const;
  std::vector<std::string> realize(const ShapeSpec& shape, int variant) const;
  std::uint64_t hash() const;
};

std::vector<ViewPatchGrid> render_views(const ShapeSpec& shape, const ViewSpec& views);

/// Cells of `kind` become absent.
ViewPatchGrid drop_patches(const ViewPatchGrid& view, PartKind kind);
/// Cells of `kind` in `a` take the features of the same-kind cells of `b`,
/// matched by raster order (cycling when `b` has fewer).
ViewPatchGrid mix_patches(const ViewPatchGrid& a, const ViewPatchGrid& b, PartKind kind);

struct ShapeRecord {
  ShapeSpec shape;
  std::vector<ViewPatchGrid> views;
  std::vector<std::vector<std::string>> captions;
  std::string split;  // "train" or "test"
};

struct CorpusOptions {
  int n_shapes = 32;
  double train_fraction = 0.8;  // by shape-id hash
  int captions_per_shape = 1;
};

struct Corpus {
  FeatureSpec features;
  std::vector<ShapeRecord> records;

  std::vector<const ShapeRecord*> split(std::string_view name) const;
  const ShapeRecord* find(std::string_view shape_id) const;
};

std::string split_for(const std::string& shape_id, double train_fraction);

Corpus generate_corpus(const CorpusOptions& opt, const ViewSpec& views, const CaptionGrammar& grammar,
                       std::uint64_t seed);

/// One JSON object per line with keys shape_id, category, parts, views,
/// captions, split in that order.
std::string corpus_jsonl(const Corpus& corpus, const CaptionGrammar& grammar);
Corpus parse_corpus_jsonl(const std::string& text, const CaptionGrammar& grammar);

}  // namespace diffcap
