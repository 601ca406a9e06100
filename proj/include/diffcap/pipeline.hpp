#pragma once

#include "diffcap/decoding.hpp"
#include "diffcap/metrics.hpp"
#include "diffcap/synthdata.hpp"

#include <functional>
#include <string>
#include <vector>

namespace diffcap {

/// (view, caption) pairs: the first `views` views of every record in `records`
/// crossed with each of its captions.
std::vector<InputPair> training_pairs(std::span<const ShapeRecord* const> records, const Vocabulary& vocab,
                                      int views, int cap_len);

/// Sampling schedule with K respaced steps; K = 0 or K = T keeps every step.
NoiseSchedule inference_schedule(ScheduleKind kind, int T, int K);

/// Applied to each view (grid, view index) before captioning.
using ViewEdit = std::function<ViewPatchGrid(const ViewPatchGrid&, int)>;

struct ShapeCaption {
  std::string shape_id;
  CaptionResult<float> result;
  Sentence caption;
  double total_ms = 0.0;
};

ShapeCaption caption_record(const DenoiserParams<float>& params, const DenoiserConfig& model,
                            const Vocabulary& vocab, const ShapeRecord& record, int views,
                            const NoiseSchedule& schedule, const DecodeOptions& opt, const ViewEdit& edit = {});

/// Captions every record and scores against its reference captions. With
/// `oracle`, each record's first reference stands in for the generated caption.
MetricsReport evaluate_records(const DenoiserParams<float>& params, const DenoiserConfig& model,
                               const Vocabulary& vocab, std::span<const ShapeRecord* const> records, int views,
                               const NoiseSchedule& schedule, const DecodeOptions& opt, bool oracle = false,
                               std::vector<ShapeCaption>* captions = nullptr);

}  // namespace diffcap
