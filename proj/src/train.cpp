#include "diffcap/train.hpp"

#include <cstdio>
#include <sstream>

namespace diffcap {

TrainState init_train_state(const DenoiserConfig& model, const TrainConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x1217));
  TrainState s;
  s.params = init_params<float>(model, rng);
  s.adam = make_adam_state(s.params);
  return s;
}

void train(TrainState& state, std::span<const InputPair> data, const DenoiserConfig& model,
           const TrainConfig& cfg, const std::function<void(const CurveRow&)>& on_step, long stop_at) {
  cfg.validate();
  model.validate();
  if (data.empty()) throw std::invalid_argument("empty training set");
  const NoiseSchedule schedule = build_schedule(cfg.schedule, cfg.steps_T);
  if (cfg.steps_T > model.max_timestep) throw std::invalid_argument("schedule T exceeds T_max");

  std::vector<InputPair> batch(cfg.batch_size);
  DenoiserParams<float> grad = DenoiserParams<float>::zeros_like(state.params);
  double window_sum = 0.0;
  const std::size_t n_prev = state.curve.size();
  for (std::size_t i = n_prev > kCurveWindow ? n_prev - kCurveWindow : 0; i < n_prev; ++i)
    window_sum += state.curve[i].loss.total;

  const long last = stop_at > 0 ? std::min(stop_at, cfg.optimizer_steps) : cfg.optimizer_steps;
  for (long step = state.adam.step + 1; step <= last; ++step) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), 1));
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    for (auto& b : batch) b = data[pick(rng)];
    Rng dropout_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), 2));
    grad.set_zero();
    const LossBreakdown loss = training_loss<float>(state.params, model, batch, schedule, cfg, rng, &grad, step,
                                                    &dropout_rng);
    adam_update(state.params, grad, state.adam, learning_rate_at(cfg, step), cfg.grad_clip,
                cfg.freeze_embeddings);

    CurveRow row{step, loss, 0.0};
    window_sum += loss.total;
    if (state.curve.size() >= static_cast<std::size_t>(kCurveWindow))
      window_sum -= state.curve[state.curve.size() - kCurveWindow].loss.total;
    const std::size_t count = std::min<std::size_t>(state.curve.size() + 1, kCurveWindow);
    row.moving_average = window_sum / static_cast<double>(count);
    state.curve.push_back(row);
    if (on_step) on_step(row);
  }
}

std::string curve_csv(std::span<const CurveRow> rows, const std::string& header_comment) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "step,anchor_term,sum_term,reg_term,ce_term,total,total_ma\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss.anchor_term,
                  r.loss.sum_term, r.loss.reg_term, r.loss.ce_term, r.loss.total, r.moving_average);
    out << buf;
  }
  return out.str();
}

std::vector<CurveRow> parse_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::vector<CurveRow> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#' || line.rfind("step", 0) == 0) continue;
    CurveRow r;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf", &r.step, &r.loss.anchor_term,
                    &r.loss.sum_term, &r.loss.reg_term, &r.loss.ce_term, &r.loss.total,
                    &r.moving_average) == 7)
      rows.push_back(r);
  }
  return rows;
}

}  // namespace diffcap
