#pragma once

#include "diffcap/denoiser.hpp"
#include "diffcap/embedding.hpp"
#include "diffcap/schedule.hpp"
#include "diffcap/types.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace diffcap {

struct TrainConfig {
  ScheduleKind schedule = ScheduleKind::Sqrt;
  int steps_T = 2000;
  int batch_size = 16;
  long optimizer_steps = 1000;
  double learning_rate = 1e-3;
  long warmup_steps = 200;
  double reg_weight = 1e-3;
  double ce_weight = 1.0;
  double grad_clip = 1.0;
  bool clamp_enabled = true;  // inference only; training never clamps
  bool freeze_embeddings = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps_T < 1 || batch_size < 1 || optimizer_steps < 0 || warmup_steps < 0)
      throw std::invalid_argument("training counts must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (reg_weight < 0.0 || ce_weight < 0.0 || grad_clip < 0.0)
      throw std::invalid_argument("loss weights must be non-negative");
  }
};

/// Terms of the simplified objective for one example (or a batch mean).
/// Exactly one of anchor_term (t = 1) and sum_term (t >= 2) is non-zero per example.
struct LossBreakdown {
  double anchor_term = 0.0;
  double sum_term = 0.0;
  double reg_term = 0.0;
  double ce_term = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    anchor_term += o.anchor_term;
    sum_term += o.sum_term;
    reg_term += o.reg_term;
    ce_term += o.ce_term;
    total += o.total;
    return *this;
  }
  LossBreakdown scaled(double s) const {
    return {anchor_term * s, sum_term * s, reg_term * s, ce_term * s, total * s};
  }
};

/// Partial noising with a caller-supplied epsilon (cap_len x H): the caption
/// segment becomes sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps; the image segment
/// is copied unchanged.
template <typename Scalar>
LatentSequence<Scalar> forward_noise_with(const LatentSequence<Scalar>& x0, int t,
                                          const NoiseSchedule& schedule, const Matrix<Scalar>& eps) {
  if (t < 1 || t > schedule.steps()) throw std::out_of_range("timestep outside 1..T");
  const double abar = schedule.alpha_bar(t);
  LatentSequence<Scalar> xt = x0;
  xt.caption() = static_cast<Scalar>(std::sqrt(abar)) * x0.caption();
  xt.caption() += static_cast<Scalar>(std::sqrt(1.0 - abar)) * eps;
  return xt;
}

template <typename Scalar>
LatentSequence<Scalar> forward_noise(const LatentSequence<Scalar>& x0, int t,
                                     const NoiseSchedule& schedule, Rng& rng) {
  if (t < 1 || t > schedule.steps()) throw std::out_of_range("timestep outside 1..T");
  return forward_noise_with(x0, t, schedule,
                            random_normal<Scalar>(x0.cap_len, x0.values.cols(), rng));
}

/// Random quantities of one training example; all independent of the parameters.
template <typename Scalar>
struct TrainingDraw {
  Matrix<Scalar> x0_noise;  // standard normal, whole sequence
  int t = 1;
  Matrix<Scalar> eps;       // standard normal, caption rows
};

template <typename Scalar>
TrainingDraw<Scalar> draw_training_sample(const DenoiserConfig& c, const NoiseSchedule& schedule,
                                          Rng& rng) {
  TrainingDraw<Scalar> d;
  d.x0_noise = random_normal<Scalar>(c.seq_len(), c.embed_dim, rng);
  d.t = std::uniform_int_distribution<int>(1, schedule.steps())(rng);
  d.eps = random_normal<Scalar>(c.cap_len, c.embed_dim, rng);
  return d;
}

/// Gradients of the caption-level loss terms with respect to their inputs.
template <typename Scalar>
struct CaptionTermGrads {
  Matrix<Scalar> d_pred;       // cap_len x H
  Matrix<Scalar> d_x0;         // seq_len x H (target of sum_term, reg_term)
  Matrix<Scalar> d_clean_cap;  // cap_len x H (target of anchor_term)
};

/// Loss terms given a caption prediction. Squared norms are summed over H and
/// averaged over rows; cross-entropy is averaged over caption positions.
/// When `grads` is non-null, fills input gradients and adds the rounding
/// head's direct contribution to `table_grad`.
template <typename Scalar>
LossBreakdown caption_loss_terms(const EmbeddingTable<Scalar>& table,
                                 const LatentSequence<Scalar>& clean,
                                 const LatentSequence<Scalar>& x0, int t,
                                 std::span<const int> caption, const Matrix<Scalar>& pred,
                                 const TrainConfig& cfg, CaptionTermGrads<Scalar>* grads = nullptr,
                                 EmbeddingTable<Scalar>* table_grad = nullptr) {
  const int cap = x0.cap_len;
  const Scalar inv_cap = Scalar(1) / static_cast<Scalar>(cap);
  LossBreakdown lb;

  const Matrix<Scalar> target = (t == 1) ? Matrix<Scalar>(clean.caption()) : Matrix<Scalar>(x0.caption());
  const Matrix<Scalar> diff = pred - target;
  const double main = static_cast<double>(diff.squaredNorm() * inv_cap);
  (t == 1 ? lb.anchor_term : lb.sum_term) = main;

  const Scalar inv_rows = Scalar(1) / static_cast<Scalar>(x0.values.rows());
  lb.reg_term = cfg.reg_weight * static_cast<double>(x0.values.squaredNorm() * inv_rows);

  Matrix<Scalar> d_pred_ce;
  if (cfg.ce_weight > 0.0) {
    const Rounding<Scalar> r = round_to_tokens(table, pred);
    const Matrix<Scalar> y = pred - caption_offsets(table, cap);
    double ce = 0.0;
    Matrix<Scalar> dlogits(cap, table.vocab_size());
    for (int k = 0; k < cap; ++k) {
      const Scalar mx = r.logits.row(k).maxCoeff();
      RowVector<Scalar> e = (r.logits.row(k).array() - mx).exp();
      const Scalar z = e.sum();
      ce += static_cast<double>(std::log(z) + mx - r.logits(k, caption[k]));
      dlogits.row(k) = e / z;
      dlogits(k, caption[k]) -= Scalar(1);
    }
    lb.ce_term = cfg.ce_weight * ce / cap;
    if (grads) {
      dlogits *= static_cast<Scalar>(cfg.ce_weight) * inv_cap;
      // logits[k][v] = -|y_k - e_v|^2
      d_pred_ce = Matrix<Scalar>::Zero(cap, table.dim());
      for (int k = 0; k < cap; ++k) {
        const Scalar row_sum = dlogits.row(k).sum();
        d_pred_ce.row(k) = Scalar(-2) * (row_sum * y.row(k) - dlogits.row(k) * table.tokens);
      }
      if (table_grad) {
        // d/d e_v = 2 dlogit (y_k - e_v); d/d offsets = -d/d y
        table_grad->tokens.noalias() += Scalar(2) * dlogits.transpose() * y;
        const RowVector<Scalar> col = dlogits.colwise().sum();
        table_grad->tokens -= (Scalar(2) * col.transpose()).asDiagonal() * table.tokens;
        table_grad->modality.row(kCaption) -= d_pred_ce.colwise().sum();
        table_grad->position.topRows(cap) -= d_pred_ce;
      }
    }
  }
  lb.total = lb.anchor_term + lb.sum_term + lb.reg_term + lb.ce_term;

  if (grads) {
    grads->d_pred = Scalar(2) * inv_cap * diff;
    if (d_pred_ce.size()) grads->d_pred += d_pred_ce;
    grads->d_x0 = (Scalar(2) * static_cast<Scalar>(cfg.reg_weight) * inv_rows) * x0.values;
    grads->d_clean_cap = Matrix<Scalar>::Zero(cap, table.dim());
    if (t == 1)
      grads->d_clean_cap = Scalar(-2) * inv_cap * diff;
    else
      grads->d_x0.bottomRows(cap) -= Scalar(2) * inv_cap * diff;
  }
  return lb;
}

/// Mean loss over `pairs` and (optionally) its exact gradient, accumulated
/// into `grad`. The random draws come from `rng` in example order.
template <typename Scalar>
LossBreakdown training_loss(const DenoiserParams<Scalar>& params, const DenoiserConfig& c,
                            std::span<const InputPair> pairs, const NoiseSchedule& schedule,
                            const TrainConfig& cfg, Rng& rng,
                            DenoiserParams<Scalar>* grad = nullptr, long step = 0,
                            Rng* dropout_rng = nullptr) {
  if (pairs.empty()) throw std::invalid_argument("empty training batch");
  if (schedule.steps() != cfg.steps_T) throw std::invalid_argument("schedule T does not match config");
  if (schedule.steps() > c.max_timestep) throw std::invalid_argument("schedule T exceeds T_max");
  const int B = static_cast<int>(pairs.size());
  const int L = c.seq_len(), cap = c.cap_len;
  const double beta0 = schedule.embedding_noise();

  std::vector<LatentSequence<Scalar>> clean(B), x0(B);
  std::vector<int> ts(B);
  Matrix<Scalar> xt_all(static_cast<Eigen::Index>(B) * L, c.embed_dim);
  for (int b = 0; b < B; ++b) {
    if (static_cast<int>(pairs[b].caption.size()) != cap || pairs[b].view.cell_count() != c.img_len)
      throw std::invalid_argument("training pair does not match the configured lengths");
    const auto draw = draw_training_sample<Scalar>(c, schedule, rng);
    clean[b] = embed_pair(params.embedding, pairs[b]);
    x0[b] = clean[b];
    x0[b].values += static_cast<Scalar>(std::sqrt(beta0)) * draw.x0_noise;
    ts[b] = draw.t;
    xt_all.middleRows(static_cast<Eigen::Index>(b) * L, L) =
        forward_noise_with(x0[b], draw.t, schedule, draw.eps).values;
  }

  if (!xt_all.allFinite()) throw NumericalFault("non-finite training input", step);
  ForwardCache<Scalar> cache;
  std::vector<int> model_ts(B);
  for (int b = 0; b < B; ++b) model_ts[b] = schedule.model_timestep(ts[b]);
  const Matrix<Scalar> out = denoiser_forward(params, c, xt_all, std::span<const int>(model_ts),
                                              grad ? &cache : nullptr, dropout_rng);
  if (!out.allFinite()) throw NumericalFault("non-finite denoiser output", step);

  LossBreakdown total;
  std::vector<CaptionTermGrads<Scalar>> term_grads(grad ? B : 0);
  Matrix<Scalar> d_out;
  if (grad) d_out = Matrix<Scalar>::Zero(out.rows(), out.cols());
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(B);
  EmbeddingTable<Scalar> ce_table_grad;
  if (grad) ce_table_grad = EmbeddingTable<Scalar>::zeros_like(params.embedding);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
    const Matrix<Scalar> pred = out.block(r0 + c.img_len, 0, cap, c.embed_dim);
    total += caption_loss_terms(params.embedding, clean[b], x0[b], ts[b], pairs[b].caption, pred,
                                cfg, grad ? &term_grads[b] : nullptr,
                                grad ? &ce_table_grad : nullptr);
    if (grad) d_out.block(r0 + c.img_len, 0, cap, c.embed_dim) = term_grads[b].d_pred * inv_b;
  }
  total = total.scaled(1.0 / B);
  if (!std::isfinite(total.total)) throw NumericalFault("non-finite training loss", step);
  if (!grad) return total;

  const Matrix<Scalar> d_xt = denoiser_backward(params, c, cache, d_out, *grad);
  grad->embedding.tokens += inv_b * ce_table_grad.tokens;
  grad->embedding.modality += inv_b * ce_table_grad.modality;
  grad->embedding.position += inv_b * ce_table_grad.position;
  for (int b = 0; b < B; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
    const double abar = schedule.alpha_bar(ts[b]);
    Matrix<Scalar> d_x0 = inv_b * term_grads[b].d_x0;
    d_x0.topRows(c.img_len) += d_xt.middleRows(r0, c.img_len);
    d_x0.bottomRows(cap) += static_cast<Scalar>(std::sqrt(abar)) * d_xt.middleRows(r0 + c.img_len, cap);
    // x_0 = EMB + noise, so d/dEMB = d/dx_0 (+ the anchor target on caption rows)
    d_x0.bottomRows(cap) += inv_b * term_grads[b].d_clean_cap;
    accumulate_embedding_grad(grad->embedding, pairs[b], d_x0);
  }
  return total;
}

template <typename Scalar>
struct SampleResult {
  Matrix<Scalar> x0_cap;  // cap_len x H
  std::vector<int> tokens;
};

/// Reverse diffusion for a batch of views, each with its own random stream.
/// The image segment is the clean view embedding at every step; the caption
/// segment starts from N(0, I). The returned latent is the final x_0 estimate
/// (clamped when `clamp` is set).
template <typename Scalar>
std::vector<SampleResult<Scalar>> sample_reverse_batch(const DenoiserParams<Scalar>& params,
                                                       const DenoiserConfig& c,
                                                       std::span<const ViewPatchGrid> views,
                                                       const NoiseSchedule& schedule,
                                                       std::span<Rng> rngs, bool clamp) {
  const int B = static_cast<int>(views.size());
  if (static_cast<int>(rngs.size()) != B) throw std::invalid_argument("one random stream per view");
  if (B == 0) return {};
  const int L = c.seq_len(), cap = c.cap_len, H = c.embed_dim;
  Matrix<Scalar> x(static_cast<Eigen::Index>(B) * L, H);
  std::vector<Matrix<Scalar>> caps(B);
  std::vector<Matrix<Scalar>> xhat(B);
  for (int b = 0; b < B; ++b) {
    if (views[b].cell_count() != c.img_len) throw std::invalid_argument("view size does not match config");
    views[b].validate(params.embedding.features);
    x.middleRows(static_cast<Eigen::Index>(b) * L, c.img_len) = embed_view(params.embedding, views[b]);
    caps[b] = random_normal<Scalar>(cap, H, rngs[b]);
  }
  std::vector<int> ts(B);
  for (int t = schedule.steps(); t >= 1; --t) {
    std::fill(ts.begin(), ts.end(), schedule.model_timestep(t));
    for (int b = 0; b < B; ++b)
      x.middleRows(static_cast<Eigen::Index>(b) * L + c.img_len, cap) = caps[b];
    const Matrix<Scalar> out = denoiser_forward(params, c, x, std::span<const int>(ts));
    const PosteriorCoeffs pc = posterior_coeffs(schedule, t);
    for (int b = 0; b < B; ++b) {
      xhat[b] = out.middleRows(static_cast<Eigen::Index>(b) * L + c.img_len, cap);
      if (clamp) xhat[b] = clamp_to_embedding(params.embedding, xhat[b]);
      Matrix<Scalar> next = static_cast<Scalar>(pc.c_xt) * caps[b] + static_cast<Scalar>(pc.c_x0) * xhat[b];
      if (t > 1) next += static_cast<Scalar>(std::sqrt(pc.var)) * random_normal<Scalar>(cap, H, rngs[b]);
      if (!next.allFinite() || !xhat[b].allFinite()) throw NumericalFault("non-finite latent in sampler", t);
      caps[b] = std::move(next);
    }
  }
  std::vector<SampleResult<Scalar>> results(B);
  for (int b = 0; b < B; ++b) {
    results[b].tokens = round_to_tokens(params.embedding, xhat[b]).tokens;
    results[b].x0_cap = std::move(xhat[b]);
  }
  return results;
}

template <typename Scalar>
SampleResult<Scalar> sample_reverse(const DenoiserParams<Scalar>& params, const DenoiserConfig& c,
                                    const ViewPatchGrid& view, const NoiseSchedule& schedule, Rng& rng,
                                    bool clamp) {
  Rng local = rng;
  auto r = sample_reverse_batch(params, c, std::span<const ViewPatchGrid>(&view, 1), schedule,
                                std::span<Rng>(&local, 1), clamp);
  rng = local;
  return std::move(r.front());
}

}  // namespace diffcap
