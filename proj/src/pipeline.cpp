#include "diffcap/pipeline.hpp"

#include <chrono>

namespace diffcap {

std::vector<InputPair> training_pairs(std::span<const ShapeRecord* const> records, const Vocabulary& vocab,
                                      int views, int cap_len) {
  std::vector<InputPair> pairs;
  for (const ShapeRecord* r : records) {
    if (views > static_cast<int>(r->views.size()))
      throw std::invalid_argument("record " + r->shape.shape_id + " has fewer than " + std::to_string(views) + " views");
    for (const auto& words : r->captions) {
      const auto ids = vocab.encode(words, cap_len);
      for (int v = 0; v < views; ++v) pairs.push_back({r->views[v], ids});
    }
  }
  return pairs;
}

NoiseSchedule inference_schedule(ScheduleKind kind, int T, int K) {
  NoiseSchedule base = build_schedule(kind, T);
  if (K == 0 || K == T) return base;
  return respace(base, K);
}

ShapeCaption caption_record(const DenoiserParams<float>& params, const DenoiserConfig& model,
                            const Vocabulary& vocab, const ShapeRecord& record, int views,
                            const NoiseSchedule& schedule, const DecodeOptions& opt, const ViewEdit& edit) {
  using clock = std::chrono::steady_clock;
  if (views < 1 || views > static_cast<int>(record.views.size()))
    throw std::invalid_argument("record " + record.shape.shape_id + " cannot supply " + std::to_string(views) + " views");
  std::vector<ViewPatchGrid> grids(record.views.begin(), record.views.begin() + views);
  if (edit)
    for (int v = 0; v < views; ++v) grids[v] = edit(grids[v], v);

  ShapeCaption out;
  out.shape_id = record.shape.shape_id;
  const auto t0 = clock::now();
  out.result = caption_shape(params, model, vocab, std::span<const ViewPatchGrid>(grids), schedule, opt);
  out.total_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  out.caption = vocab.decode(out.result.tokens);
  return out;
}

MetricsReport evaluate_records(const DenoiserParams<float>& params, const DenoiserConfig& model,
                               const Vocabulary& vocab, std::span<const ShapeRecord* const> records, int views,
                               const NoiseSchedule& schedule, const DecodeOptions& opt, bool oracle,
                               std::vector<ShapeCaption>* captions) {
  if (records.empty()) throw std::invalid_argument("nothing to evaluate: the split is empty");
  std::vector<std::string> ids;
  std::vector<Sentence> cands;
  std::vector<std::vector<Sentence>> refs;
  for (const ShapeRecord* r : records) {
    ids.push_back(r->shape.shape_id);
    refs.push_back(r->captions);
    if (oracle) {
      cands.push_back(r->captions.front());
      continue;
    }
    ShapeCaption sc = caption_record(params, model, vocab, *r, views, schedule, opt);
    cands.push_back(sc.caption);
    if (captions) captions->push_back(std::move(sc));
  }
  return evaluate_captions(ids, cands, refs);
}

}  // namespace diffcap
