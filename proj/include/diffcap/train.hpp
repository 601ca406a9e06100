#pragma once

#include "diffcap/denoiser.hpp"
#include "diffcap/diffusion.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace diffcap {

template <typename Scalar>
struct AdamState {
  DenoiserParams<Scalar> m, v;
  long step = 0;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(const DenoiserParams<Scalar>& params) {
  return {DenoiserParams<Scalar>::zeros_like(params), DenoiserParams<Scalar>::zeros_like(params), 0};
}

/// Linear warmup to the peak rate, then linear decay to 10% of it at the last step.
inline double learning_rate_at(const TrainConfig& cfg, long step) {
  const double peak = cfg.learning_rate;
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const long span = std::max(1L, cfg.optimizer_steps - cfg.warmup_steps);
  const double frac = std::clamp(static_cast<double>(step - cfg.warmup_steps) / span, 0.0, 1.0);
  return peak * (1.0 - 0.9 * frac);
}

template <typename Scalar>
double global_norm(const DenoiserParams<Scalar>& g) {
  double sq = 0.0;
  g.visit([&](const std::string&, const Matrix<Scalar>& m) { sq += static_cast<double>(m.squaredNorm()); });
  return std::sqrt(sq);
}

/// One Adam step (beta1 0.9, beta2 0.999, eps 1e-8) with optional global-norm clipping.
template <typename Scalar>
void adam_update(DenoiserParams<Scalar>& params, const DenoiserParams<Scalar>& grad,
                 AdamState<Scalar>& state, double lr, double clip, bool freeze_embeddings) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++state.step;
  double scale = 1.0;
  if (clip > 0.0) {
    const double norm = global_norm(grad);
    if (norm > clip) scale = clip / norm;
  }
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  std::vector<const Matrix<Scalar>*> gs;
  grad.visit([&](const std::string&, const Matrix<Scalar>& m) { gs.push_back(&m); });
  std::vector<Matrix<Scalar>*> ms, vs;
  state.m.visit([&](const std::string&, Matrix<Scalar>& m) { ms.push_back(&m); });
  state.v.visit([&](const std::string&, Matrix<Scalar>& m) { vs.push_back(&m); });
  std::size_t i = 0;
  params.visit([&](const std::string& name, Matrix<Scalar>& p) {
    const std::size_t k = i++;
    if (freeze_embeddings && (name == "embedding.tokens" || name == "embedding.patch_projector"))
      return;
    const auto g = (static_cast<Scalar>(scale) * gs[k]->array()).eval();
    ms[k]->array() = static_cast<Scalar>(b1) * ms[k]->array() + static_cast<Scalar>(1 - b1) * g;
    vs[k]->array() = static_cast<Scalar>(b2) * vs[k]->array() + static_cast<Scalar>(1 - b2) * g.square();
    p.array() -= static_cast<Scalar>(lr) * (ms[k]->array() / static_cast<Scalar>(c1)) /
                 ((vs[k]->array() / static_cast<Scalar>(c2)).sqrt() + static_cast<Scalar>(eps));
  });
}

struct CurveRow {
  long step = 0;
  LossBreakdown loss;
  double moving_average = 0.0;
};

inline constexpr int kCurveWindow = 500;

/// Parameters, optimizer moments and curve history of a (possibly resumed) run.
struct TrainState {
  DenoiserParams<float> params;
  AdamState<float> adam;
  std::vector<CurveRow> curve;
};

TrainState init_train_state(const DenoiserConfig& model, const TrainConfig& cfg);

/// Runs optimizer steps state.adam.step+1 .. cfg.optimizer_steps (or stop_at
/// when it is positive and smaller). Step s draws
/// its batch and noise from a stream seeded by (cfg.seed, s), so a resumed run
/// reproduces an uninterrupted one.
void train(TrainState& state, std::span<const InputPair> data, const DenoiserConfig& model,
           const TrainConfig& cfg, const std::function<void(const CurveRow&)>& on_step = {}, long stop_at = 0);

/// CSV with columns step, anchor_term, sum_term, reg_term, ce_term, total, total_ma.
std::string curve_csv(std::span<const CurveRow> rows, const std::string& header_comment = "");
std::vector<CurveRow> parse_curve_csv(const std::string& text);

}  // namespace diffcap
