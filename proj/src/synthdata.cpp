#include "diffcap/synthdata.hpp"

#include "diffcap/types.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace diffcap {

namespace {

const std::array<const char*, kCategoryCount> kCategoryNames = {"chair", "table", "lamp", "cart"};
const std::array<const char*, kPartKindCount> kPartNames = {"back",  "seat", "leg",  "top",    "drawer",
                                                             "shade", "stem", "base", "handle", "wheel"};
// Caption words for part kinds (plural where the object has several).
const std::array<const char*, kPartKindCount> kPartWords = {"back",  "seat", "legs", "top",    "drawer",
                                                             "shade", "stem", "base", "handle", "wheels"};

struct Cell {
  int row, col;
};

const std::vector<Cell>& base_layout(Category c, PartKind k) {
  static const std::vector<Cell> none;
  static const std::vector<Cell> chair_back{{0, 1}, {0, 2}, {1, 1}, {1, 2}};
  static const std::vector<Cell> chair_seat{{2, 0}, {2, 1}, {2, 2}, {2, 3}};
  static const std::vector<Cell> chair_leg{{3, 0}, {3, 3}};
  static const std::vector<Cell> table_top{{1, 0}, {1, 1}, {1, 2}, {1, 3}};
  static const std::vector<Cell> table_drawer{{2, 1}, {2, 2}};
  static const std::vector<Cell> table_leg{{2, 0}, {2, 3}, {3, 0}, {3, 3}};
  static const std::vector<Cell> lamp_shade{{0, 1}, {0, 2}, {1, 1}, {1, 2}};
  static const std::vector<Cell> lamp_stem{{2, 1}, {2, 2}};
  static const std::vector<Cell> lamp_base{{3, 0}, {3, 1}, {3, 2}, {3, 3}};
  static const std::vector<Cell> cart_handle{{0, 3}, {1, 3}};
  static const std::vector<Cell> cart_top{{2, 0}, {2, 1}, {2, 2}};
  static const std::vector<Cell> cart_wheel{{3, 0}, {3, 2}};
  switch (c) {
    case Category::Chair:
      if (k == PartKind::Back) return chair_back;
      if (k == PartKind::Seat) return chair_seat;
      if (k == PartKind::Leg) return chair_leg;
      break;
    case Category::Table:
      if (k == PartKind::Top) return table_top;
      if (k == PartKind::Drawer) return table_drawer;
      if (k == PartKind::Leg) return table_leg;
      break;
    case Category::Lamp:
      if (k == PartKind::Shade) return lamp_shade;
      if (k == PartKind::Stem) return lamp_stem;
      if (k == PartKind::Base) return lamp_base;
      break;
    case Category::Cart:
      if (k == PartKind::Handle) return cart_handle;
      if (k == PartKind::Top) return cart_top;
      if (k == PartKind::Wheel) return cart_wheel;
      break;
  }
  return none;
}

}  // namespace

std::string to_string(Category c) { return kCategoryNames[static_cast<int>(c)]; }
std::string to_string(PartKind k) { return kPartNames[static_cast<int>(k)]; }

Category parse_category(std::string_view s) {
  for (int i = 0; i < kCategoryCount; ++i)
    if (s == kCategoryNames[i]) return static_cast<Category>(i);
  throw std::invalid_argument("unknown category: " + std::string(s));
}

PartKind parse_part_kind(std::string_view s) {
  for (int i = 0; i < kPartKindCount; ++i)
    if (s == kPartNames[i] || s == kPartWords[i]) return static_cast<PartKind>(i);
  throw std::invalid_argument("unknown part kind: " + std::string(s));
}

const std::vector<PartKind>& category_parts(Category c) {
  static const std::vector<PartKind> chair{PartKind::Back, PartKind::Seat, PartKind::Leg};
  static const std::vector<PartKind> table{PartKind::Top, PartKind::Drawer, PartKind::Leg};
  static const std::vector<PartKind> lamp{PartKind::Shade, PartKind::Stem, PartKind::Base};
  static const std::vector<PartKind> cart{PartKind::Handle, PartKind::Top, PartKind::Wheel};
  switch (c) {
    case Category::Chair: return chair;
    case Category::Table: return table;
    case Category::Lamp: return lamp;
    case Category::Cart: return cart;
  }
  throw std::invalid_argument("unknown category");
}

std::vector<int> layout_cells(Category c, PartKind k, bool mirrored) {
  std::vector<int> cells;
  for (const Cell& cell : base_layout(c, k)) {
    const int col = mirrored ? kGridSize - 1 - cell.col : cell.col;
    cells.push_back(cell.row * kGridSize + col);
  }
  std::sort(cells.begin(), cells.end());
  return cells;
}

void ShapeSpec::validate() const {
  const auto& legal = category_parts(category);
  std::set<PartKind> seen;
  std::set<int> used;
  for (const Part& p : parts) {
    if (std::find(legal.begin(), legal.end(), p.kind) == legal.end())
      throw std::invalid_argument(shape_id + ": part " + to_string(p.kind) + " is illegal for " +
                                  to_string(category));
    if (!seen.insert(p.kind).second) throw std::invalid_argument(shape_id + ": duplicate part kind");
    for (int cell : layout_cells(category, p.kind, false))
      if (!used.insert(cell).second) throw std::invalid_argument(shape_id + ": layout collision");
  }
}

void ViewSpec::validate() const {
  if (views.empty()) throw std::invalid_argument("view spec needs at least one viewpoint");
  for (int k = 0; k < kPartKindCount; ++k) {
    const auto kind = static_cast<PartKind>(k);
    bool visible = false;
    for (const auto& v : views)
      visible |= std::find(v.hidden.begin(), v.hidden.end(), kind) == v.hidden.end();
    if (!visible) throw std::invalid_argument("part kind " + to_string(kind) + " is hidden from every view");
  }
  for (const auto& v : views)
    if (v.elevation_deg != 0 && v.elevation_deg != 30 && v.elevation_deg != -30)
      throw std::invalid_argument("elevation must be one of -30, 0, +30");
}

ViewSpec ViewSpec::standard(int count) {
  if (count < 1) throw std::invalid_argument("need at least one view");
  static const int kElevations[3] = {-30, 0, 30};
  const std::vector<PartKind> ground{PartKind::Leg, PartKind::Base, PartKind::Wheel};
  ViewSpec spec;
  for (int i = 0; i < count; ++i) {
    Viewpoint vp{kElevations[i % 3], i % 2 == 1, {}};
    if (count >= 2 && i == 0) {
      for (int k = 0; k < kPartKindCount; ++k) {
        const auto kind = static_cast<PartKind>(k);
        if (std::find(ground.begin(), ground.end(), kind) == ground.end()) vp.hidden.push_back(kind);
      }
    } else if (i == 9) {
      vp.hidden = ground;
    }
    spec.views.push_back(std::move(vp));
  }
  spec.validate();
  return spec;
}

FeatureSpec CaptionGrammar::features() const {
  return {kPartKindCount, static_cast<int>(colors.size()), static_cast<int>(materials.size()),
          static_cast<int>(textures.size())};
}

Vocabulary CaptionGrammar::vocabulary() const {
  std::vector<std::string> words{"a", "with", ",", "and"};
  for (const char* c : kCategoryNames) words.emplace_back(c);
  for (const char* p : kPartWords) words.emplace_back(p);
  for (const auto& w : colors) words.push_back(w);
  for (const auto& w : materials) words.push_back(w);
  for (const auto& w : textures) words.push_back(w);
  return Vocabulary(words);
}

std::vector<std::string> CaptionGrammar::realize(const ShapeSpec& shape, int variant) const {
  if (shape.parts.empty()) throw std::invalid_argument(shape.shape_id + ": shape has no parts");
  const int n = static_cast<int>(shape.parts.size());
  std::vector<std::string> w{"a", textures.at(shape.parts[0].texture), to_string(shape.category), "with"};
  for (int i = 0; i < n; ++i) {
    const Part& p = shape.parts[(i + variant) % n];
    if (i > 0) w.push_back(i == n - 1 ? "and" : ",");
    w.push_back(colors.at(p.color));
    w.push_back(materials.at(p.material));
    w.push_back(kPartWords[static_cast<int>(p.kind)]);
  }
  if (static_cast<int>(w.size()) + 2 > max_length)
    throw std::length_error(shape.shape_id + ": caption of " + std::to_string(w.size()) +
                            " words exceeds length " + std::to_string(max_length));
  return w;
}

std::uint64_t CaptionGrammar::hash() const {
  std::string s = "grammar-v1;" + std::to_string(max_length) + ";" + std::to_string(seed) + ";";
  for (const auto* lex : {&colors, &materials, &textures}) {
    for (const auto& w : *lex) s += w + ",";
    s += ";";
  }
  return fnv1a64(s);
}

std::vector<ViewPatchGrid> render_views(const ShapeSpec& shape, const ViewSpec& spec) {
  shape.validate();
  std::vector<ViewPatchGrid> out;
  for (const Viewpoint& vp : spec.views) {
    ViewPatchGrid grid(kGridSize);
    for (const Part& p : shape.parts) {
      if (std::find(vp.hidden.begin(), vp.hidden.end(), p.kind) != vp.hidden.end()) continue;
      for (int cell : layout_cells(shape.category, p.kind, vp.mirrored))
        grid.cell(cell) = Patch{static_cast<int>(p.kind), p.color, p.material, p.texture, true};
    }
    out.push_back(std::move(grid));
  }
  return out;
}

ViewPatchGrid drop_patches(const ViewPatchGrid& view, PartKind kind) {
  ViewPatchGrid out = view;
  for (int i = 0; i < out.cell_count(); ++i)
    if (out.cell(i).present && out.cell(i).part == static_cast<int>(kind)) out.cell(i) = Patch{};
  return out;
}

ViewPatchGrid mix_patches(const ViewPatchGrid& a, const ViewPatchGrid& b, PartKind kind) {
  if (a.grid_size() != b.grid_size()) throw std::invalid_argument("mixing grids of different sizes");
  auto cells_of = [&](const ViewPatchGrid& g) {
    std::vector<int> idx;
    for (int i = 0; i < g.cell_count(); ++i)
      if (g.cell(i).present && g.cell(i).part == static_cast<int>(kind)) idx.push_back(i);
    return idx;
  };
  const auto slots = cells_of(a);
  const auto donors = cells_of(b);
  if (slots.empty()) return a;
  if (donors.empty()) throw std::invalid_argument("donor view has no visible " + to_string(kind) + " cells");
  ViewPatchGrid out = a;
  for (std::size_t i = 0; i < slots.size(); ++i) out.cell(slots[i]) = b.cell(donors[i % donors.size()]);
  return out;
}

std::vector<const ShapeRecord*> Corpus::split(std::string_view name) const {
  std::vector<const ShapeRecord*> out;
  for (const auto& r : records)
    if (name == "all" || r.split == name) out.push_back(&r);
  return out;
}

const ShapeRecord* Corpus::find(std::string_view shape_id) const {
  for (const auto& r : records)
    if (r.shape.shape_id == shape_id) return &r;
  return nullptr;
}

std::string split_for(const std::string& shape_id, double train_fraction) {
  const double u = static_cast<double>(fnv1a64(shape_id) % 10000) / 10000.0;
  return u < train_fraction ? "train" : "test";
}

Corpus generate_corpus(const CorpusOptions& opt, const ViewSpec& views, const CaptionGrammar& grammar,
                       std::uint64_t seed) {
  if (opt.n_shapes < 1) throw std::invalid_argument("need at least one shape");
  if (opt.captions_per_shape < 1) throw std::invalid_argument("need at least one caption per shape");
  views.validate();
  Corpus corpus;
  corpus.features = grammar.features();
  for (int i = 0; i < opt.n_shapes; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    char id[32];
    std::snprintf(id, sizeof id, "shape-%05d", i);
    ShapeRecord rec;
    rec.shape.shape_id = id;
    rec.shape.category = static_cast<Category>(std::uniform_int_distribution<int>(0, kCategoryCount - 1)(rng));
    const int texture = std::uniform_int_distribution<int>(0, static_cast<int>(grammar.textures.size()) - 1)(rng);
    for (PartKind k : category_parts(rec.shape.category)) {
      Part p{k};
      p.color = std::uniform_int_distribution<int>(0, static_cast<int>(grammar.colors.size()) - 1)(rng);
      p.material = std::uniform_int_distribution<int>(0, static_cast<int>(grammar.materials.size()) - 1)(rng);
      p.texture = texture;
      rec.shape.parts.push_back(p);
    }
    rec.views = render_views(rec.shape, views);
    for (int v = 0; v < opt.captions_per_shape; ++v) rec.captions.push_back(grammar.realize(rec.shape, v));
    rec.split = split_for(rec.shape.shape_id, opt.train_fraction);
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

namespace {

int lexicon_index(const std::vector<std::string>& lex, const std::string& w) {
  auto it = std::find(lex.begin(), lex.end(), w);
  if (it == lex.end()) throw std::invalid_argument("unknown attribute word: " + w);
  return static_cast<int>(it - lex.begin());
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
  return s;
}

}  // namespace

std::string corpus_jsonl(const Corpus& corpus, const CaptionGrammar& grammar) {
  std::string out;
  for (const auto& r : corpus.records) {
    nlohmann::ordered_json j;
    j["shape_id"] = r.shape.shape_id;
    j["category"] = to_string(r.shape.category);
    j["parts"] = nlohmann::ordered_json::array();
    for (const auto& p : r.shape.parts) {
      nlohmann::ordered_json pj;
      pj["kind"] = to_string(p.kind);
      pj["color"] = grammar.colors.at(p.color);
      pj["material"] = grammar.materials.at(p.material);
      pj["texture"] = grammar.textures.at(p.texture);
      j["parts"].push_back(pj);
    }
    j["views"] = nlohmann::ordered_json::array();
    for (const auto& v : r.views) {
      auto grid = nlohmann::ordered_json::array();
      for (const auto& c : v.cells())
        grid.push_back({c.part, c.color, c.material, c.texture, c.present ? 1 : 0});
      j["views"].push_back(grid);
    }
    j["captions"] = nlohmann::ordered_json::array();
    for (const auto& c : r.captions) j["captions"].push_back(join(c));
    j["split"] = r.split;
    out += j.dump() + "\n";
  }
  return out;
}

Corpus parse_corpus_jsonl(const std::string& text, const CaptionGrammar& grammar) {
  Corpus corpus;
  corpus.features = grammar.features();
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    ShapeRecord r;
    r.shape.shape_id = j.at("shape_id").get<std::string>();
    r.shape.category = parse_category(j.at("category").get<std::string>());
    for (const auto& pj : j.at("parts")) {
      Part p{parse_part_kind(pj.at("kind").get<std::string>())};
      p.color = lexicon_index(grammar.colors, pj.at("color").get<std::string>());
      p.material = lexicon_index(grammar.materials, pj.at("material").get<std::string>());
      p.texture = lexicon_index(grammar.textures, pj.at("texture").get<std::string>());
      r.shape.parts.push_back(p);
    }
    r.shape.validate();
    for (const auto& gj : j.at("views")) {
      ViewPatchGrid grid(kGridSize);
      if (static_cast<int>(gj.size()) != grid.cell_count())
        throw std::invalid_argument("dataset line " + std::to_string(line_no) + ": wrong grid size");
      for (int i = 0; i < grid.cell_count(); ++i) {
        const auto& c = gj.at(i);
        grid.cell(i) = Patch{c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>(), c.at(3).get<int>(),
                             c.at(4).get<int>() != 0};
      }
      grid.validate(corpus.features);
      r.views.push_back(std::move(grid));
    }
    for (const auto& cj : j.at("captions")) r.captions.push_back(split_words(cj.get<std::string>()));
    r.split = j.at("split").get<std::string>();
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

}  // namespace diffcap
