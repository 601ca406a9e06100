#include "diffcap/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffcap {

namespace {

constexpr double kSqrtShift = 1e-4;
constexpr double kSqrtFloor = 1e-5;
constexpr double kLinearStart = 1e-4;
constexpr double kLinearEnd = 0.02;
constexpr double kCosineOffset = 0.008;

// Betas from a raw alpha_bar curve, clipped to kMaxBeta.
std::vector<double> betas_from_alpha_bars(const std::vector<double>& abar) {
  std::vector<double> betas(abar.size() - 1);
  for (std::size_t t = 1; t < abar.size(); ++t)
    betas[t - 1] = std::min(1.0 - abar[t] / abar[t - 1], NoiseSchedule::kMaxBeta);
  return betas;
}

}  // namespace

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Sqrt: return "sqrt";
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::Cosine: return "cosine";
  }
  return "unknown";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "sqrt") return ScheduleKind::Sqrt;
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "cosine" || name == "t-cosine") return ScheduleKind::Cosine;
  throw std::invalid_argument("unknown schedule kind: " + std::string(name));
}

NoiseSchedule NoiseSchedule::from_betas(ScheduleKind kind, std::span<const double> betas,
                                        double alpha_bar0) {
  if (betas.empty()) throw std::invalid_argument("schedule needs at least one step");
  if (!(alpha_bar0 > 0.0 && alpha_bar0 <= 1.0))
    throw std::invalid_argument("alpha_bar(0) must lie in (0, 1]");
  NoiseSchedule s;
  s.kind_ = kind;
  s.betas_.assign(betas.size() + 1, 0.0);
  s.alpha_bars_.assign(betas.size() + 1, 0.0);
  s.betas_[0] = 1.0 - alpha_bar0;
  s.alpha_bars_[0] = alpha_bar0;
  for (std::size_t t = 1; t <= betas.size(); ++t) {
    s.betas_[t] = betas[t - 1];
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - betas[t - 1]);
  }
  s.validate();
  return s;
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw std::out_of_range("timestep outside 1..T");
  return betas_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw std::out_of_range("timestep outside 0..T");
  return alpha_bars_[t];
}

double NoiseSchedule::embedding_noise() const {
  const double b0 = 1.0 - alpha_bars_[0];
  return b0 > 0.0 ? b0 : betas_[1];
}

int NoiseSchedule::model_timestep(int t) const {
  if (t < 1 || t > steps()) throw std::out_of_range("timestep outside 1..T");
  return respaced() ? timestep_map_[t - 1] : t;
}

std::vector<std::string> NoiseSchedule::validate() const {
  const int T = steps();
  if (T < 1) throw std::logic_error("schedule has no steps");
  for (int t = 1; t <= T; ++t) {
    if (!(betas_[t] > 0.0 && betas_[t] < 1.0))
      throw std::logic_error("beta(" + std::to_string(t) + ") outside (0, 1)");
    if (!(alpha_bars_[t] < alpha_bars_[t - 1]))
      throw std::logic_error("alpha_bar not strictly decreasing at t=" + std::to_string(t));
    const double expect = alpha_bars_[t - 1] * (1.0 - betas_[t]);
    if (std::abs(alpha_bars_[t] - expect) > 1e-12 * std::abs(expect))
      throw std::logic_error("alpha_bar product mismatch at t=" + std::to_string(t));
  }
  std::vector<std::string> warnings;
  if (alpha_bars_[T] > 1e-3)
    warnings.push_back("alpha_bar(T) = " + std::to_string(alpha_bars_[T]) +
                       " exceeds 1e-3; the chain does not reach near-pure noise");
  return warnings;
}

NoiseSchedule build_schedule(ScheduleKind kind, int steps) {
  if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
  const double T = steps;
  std::vector<double> abar(steps + 1);
  std::vector<double> betas;
  switch (kind) {
    case ScheduleKind::Sqrt:
      for (int t = 0; t <= steps; ++t)
        abar[t] = std::max(1.0 - std::sqrt(t / T + kSqrtShift), kSqrtFloor);
      betas = betas_from_alpha_bars(abar);
      return NoiseSchedule::from_betas(kind, betas, abar[0]);
    case ScheduleKind::Linear:
      betas.resize(steps);
      for (int t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : (t - 1) / (T - 1);
        betas[t - 1] = std::min(kLinearStart + frac * (kLinearEnd - kLinearStart),
                                NoiseSchedule::kMaxBeta);
      }
      return NoiseSchedule::from_betas(kind, betas, 1.0);
    case ScheduleKind::Cosine: {
      auto f = [&](double t) {
        const double c = std::cos((t / T + kCosineOffset) / (1.0 + kCosineOffset) *
                                  std::numbers::pi / 2.0);
        return c * c;
      };
      for (int t = 0; t <= steps; ++t) abar[t] = f(t) / f(0);
      betas = betas_from_alpha_bars(abar);
      return NoiseSchedule::from_betas(kind, betas, 1.0);
    }
  }
  throw std::invalid_argument("unknown schedule kind");
}

NoiseSchedule respace(const NoiseSchedule& schedule, int count) {
  const int T = schedule.steps();
  if (count < 1 || count > T) throw std::invalid_argument("respacing needs 1 <= K <= T");
  std::vector<int> kept;
  kept.reserve(count);
  for (int k = 1; k <= count; ++k) {
    const int tau = static_cast<int>(std::llround(static_cast<double>(k) * T / count));
    if (kept.empty() || tau != kept.back()) kept.push_back(tau);
  }
  return respace(schedule, kept);
}

NoiseSchedule respace(const NoiseSchedule& schedule, std::span<const int> kept) {
  if (schedule.respaced()) throw std::invalid_argument("schedule is already respaced");
  const int T = schedule.steps();
  if (kept.empty() || static_cast<int>(kept.size()) > T)
    throw std::invalid_argument("respacing needs 1 <= K <= T");
  if (kept.back() != T) throw std::invalid_argument("respaced timesteps must end at T");
  std::vector<double> betas;
  betas.reserve(kept.size());
  int prev = 0;
  for (int tau : kept) {
    if (tau <= prev || tau > T) throw std::invalid_argument("respaced timesteps must increase");
    betas.push_back(1.0 - schedule.alpha_bar(tau) / schedule.alpha_bar(prev));
    prev = tau;
  }
  NoiseSchedule out = NoiseSchedule::from_betas(schedule.kind(), betas, schedule.alpha_bar(0));
  out.timestep_map_.assign(kept.begin(), kept.end());
  return out;
}

PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.steps()) throw std::out_of_range("timestep outside 1..T");
  const double beta = s.beta(t);
  const double abar = s.alpha_bar(t);
  const double abar_prev = s.alpha_bar(t - 1);
  const double denom = 1.0 - abar;
  return {std::sqrt(1.0 - beta) * (1.0 - abar_prev) / denom,
          std::sqrt(abar_prev) * beta / denom,
          beta * (1.0 - abar_prev) / denom};
}

}  // namespace diffcap
