#pragma once

#include "diffcap/diffusion.hpp"
#include "diffcap/metrics.hpp"
#include "diffcap/vocab.hpp"

#include <functional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace diffcap {

template <typename Scalar>
struct Candidate {
  std::vector<int> tokens;  // rounding of x0_cap, full framed length
  Matrix<Scalar> x0_cap;
  int view_index = 0;
};

template <typename Scalar>
struct CandidateSet {
  int view_index = 0;
  std::vector<Candidate<Scalar>> candidates;
};

/// Pairwise loss on content token sequences (specials already stripped).
using PairwiseLoss = std::function<double(std::span<const int>, std::span<const int>)>;

/// -BLEU@4 with add-one smoothing on orders >= 2. An empty sequence on either
/// side has zero similarity.
inline double negative_bleu_loss(std::span<const int> a, std::span<const int> b) {
  if (a.empty() || b.empty()) return -0.0;
  const std::vector<int> ref(b.begin(), b.end());
  return -bleu<int>(a, std::span<const std::vector<int>>(&ref, 1), 4, true);
}

struct MbrSelection {
  int index = 0;
  std::vector<double> risks;  // expected loss of each candidate
};

/// Minimum Bayes risk over content sequences: argmin_i (1/|S|) sum_j loss(i, j),
/// self-term included, ties to the lowest index.
inline MbrSelection mbr_select(std::span<const std::vector<int>> sequences,
                               const PairwiseLoss& loss = negative_bleu_loss) {
  if (sequences.empty()) throw std::invalid_argument("MBR needs at least one candidate");
  const std::size_t S = sequences.size();
  MbrSelection sel;
  sel.risks.assign(S, 0.0);
  for (std::size_t i = 0; i < S; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < S; ++j) sum += loss(sequences[i], sequences[j]);
    sel.risks[i] = sum / static_cast<double>(S);
    if (sel.risks[i] < sel.risks[sel.index]) sel.index = static_cast<int>(i);
  }
  return sel;
}

template <typename Scalar>
MbrSelection mbr_select(const CandidateSet<Scalar>& set, const Vocabulary& vocab,
                        const PairwiseLoss& loss = negative_bleu_loss) {
  std::vector<std::vector<int>> seqs;
  for (const auto& c : set.candidates) seqs.push_back(vocab.strip(c.tokens));
  return mbr_select(std::span<const std::vector<int>>(seqs), loss);
}

enum class Pooling { Max, Mean, Stochastic };

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::Max: return "max";
    case Pooling::Mean: return "mean";
    case Pooling::Stochastic: return "stochastic";
  }
  return "unknown";
}

inline Pooling parse_pooling(std::string_view s) {
  if (s == "max") return Pooling::Max;
  if (s == "mean") return Pooling::Mean;
  if (s == "stochastic") return Pooling::Stochastic;
  throw std::invalid_argument("unknown pooling method: " + std::string(s));
}

/// Element-wise pooling of per-view caption latents. Stochastic pooling picks,
/// per element, the value of one uniformly drawn view.
template <typename Scalar>
Matrix<Scalar> aggregate_views(std::span<const Matrix<Scalar>> latents, Pooling method, Rng& rng) {
  if (latents.empty()) throw std::invalid_argument("nothing to aggregate");
  for (const auto& m : latents)
    if (m.rows() != latents[0].rows() || m.cols() != latents[0].cols())
      throw std::invalid_argument("latent shapes differ");
  Matrix<Scalar> out = latents[0];
  switch (method) {
    case Pooling::Max:
      for (std::size_t i = 1; i < latents.size(); ++i) out = out.cwiseMax(latents[i]);
      break;
    case Pooling::Mean:
      for (std::size_t i = 1; i < latents.size(); ++i) out += latents[i];
      out /= static_cast<Scalar>(latents.size());
      break;
    case Pooling::Stochastic: {
      std::uniform_int_distribution<std::size_t> pick(0, latents.size() - 1);
      for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = latents[pick(rng)].data()[i];
      break;
    }
  }
  return out;
}

/// Sub-seed of candidate `sample` on view `view` under `master_seed`.
inline std::uint64_t candidate_seed(std::uint64_t master_seed, int view, int sample) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(view) + 1, static_cast<std::uint64_t>(sample) + 1);
}

/// S independent reverse-diffusion samples of one view.
template <typename Scalar>
CandidateSet<Scalar> generate_candidates(const DenoiserParams<Scalar>& params, const DenoiserConfig& c,
                                         const ViewPatchGrid& view, int view_index, int samples,
                                         const NoiseSchedule& schedule, std::uint64_t master_seed,
                                         bool clamp) {
  if (samples < 1) throw std::invalid_argument("need at least one candidate");
  std::vector<ViewPatchGrid> views(samples, view);
  std::vector<Rng> rngs;
  for (int s = 0; s < samples; ++s) rngs.emplace_back(candidate_seed(master_seed, view_index, s));
  auto results = sample_reverse_batch(params, c, std::span<const ViewPatchGrid>(views), schedule,
                                      std::span<Rng>(rngs), clamp);
  CandidateSet<Scalar> set{view_index, {}};
  for (auto& r : results) set.candidates.push_back({std::move(r.tokens), std::move(r.x0_cap), view_index});
  return set;
}

template <typename Scalar>
struct CaptionResult {
  std::vector<int> tokens;  // rounding of the pooled latent
  Matrix<Scalar> pooled;
  std::vector<CandidateSet<Scalar>> candidate_sets;
  std::vector<MbrSelection> selections;
};

struct DecodeOptions {
  int samples = 5;
  Pooling pooling = Pooling::Max;
  bool clamp = true;
  std::uint64_t seed = 0;
};

/// Per view: candidates, MBR selection; then pool the selected latents across
/// views and round the pooled latent.
template <typename Scalar>
CaptionResult<Scalar> caption_shape(const DenoiserParams<Scalar>& params, const DenoiserConfig& c,
                                    const Vocabulary& vocab, std::span<const ViewPatchGrid> views,
                                    const NoiseSchedule& schedule, const DecodeOptions& opt) {
  if (views.empty()) throw std::invalid_argument("caption_shape needs at least one view");
  CaptionResult<Scalar> res;
  std::vector<Matrix<Scalar>> selected;
  for (std::size_t v = 0; v < views.size(); ++v) {
    auto set = generate_candidates(params, c, views[v], static_cast<int>(v), opt.samples, schedule,
                                   opt.seed, opt.clamp);
    auto sel = mbr_select(set, vocab);
    selected.push_back(set.candidates[sel.index].x0_cap);
    res.candidate_sets.push_back(std::move(set));
    res.selections.push_back(std::move(sel));
  }
  Rng pool_rng(derive_seed(opt.seed, 0x9001));
  res.pooled = aggregate_views<Scalar>(selected, opt.pooling, pool_rng);
  res.tokens = round_to_tokens(params.embedding, res.pooled).tokens;
  return res;
}

}  // namespace diffcap
