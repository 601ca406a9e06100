#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace diffcap {

enum class ScheduleKind { Sqrt, Linear, Cosine };

std::string to_string(ScheduleKind kind);
/// Accepts "sqrt", "linear", "cosine" (and "t-cosine" as an alias for cosine).
ScheduleKind parse_schedule_kind(std::string_view name);

struct PosteriorCoeffs {
  double c_xt;
  double c_x0;
  double var;
};

/// Betas and cumulative alpha products of a T-step diffusion.
///
/// Index t runs 1..T for betas and 0..T for alpha_bars. alpha_bar(0) carries
/// the embedding-stage noise (1 - alpha_bar(0)) applied when sampling x_0 from
/// token embeddings; alpha_bar(t) = alpha_bar(t-1) * (1 - beta(t)) holds for all t.
class NoiseSchedule {
 public:
  static constexpr double kMaxBeta = 0.999;

  /// `betas` holds beta_1..beta_T.
  static NoiseSchedule from_betas(ScheduleKind kind, std::span<const double> betas,
                                  double alpha_bar0 = 1.0);

  ScheduleKind kind() const { return kind_; }
  int steps() const { return static_cast<int>(betas_.size()) - 1; }
  double beta(int t) const;
  double alpha_bar(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }

  /// Variance of q_phi(x_0 | w). Equals 1 - alpha_bar(0) when positive,
  /// otherwise beta(1) (linear and cosine schedules start at alpha_bar(0) = 1).
  double embedding_noise() const;

  bool respaced() const { return !timestep_map_.empty(); }
  /// Original timestep indices for each respaced step (empty when not respaced).
  const std::vector<int>& timestep_map() const { return timestep_map_; }
  /// Timestep the denoiser is conditioned on at step t of this schedule.
  int model_timestep(int t) const;

  /// Throws std::logic_error on a hard invariant violation; returns soft
  /// warnings (currently: alpha_bar(T) above 1e-3).
  std::vector<std::string> validate() const;

 private:
  friend NoiseSchedule respace(const NoiseSchedule&, std::span<const int>);
  NoiseSchedule() = default;

  ScheduleKind kind_ = ScheduleKind::Sqrt;
  std::vector<double> betas_;       // [0] is unused by the chain; betas_[t] for t >= 1
  std::vector<double> alpha_bars_;  // size T+1
  std::vector<int> timestep_map_;
};

NoiseSchedule build_schedule(ScheduleKind kind, int steps);

/// Evenly spaced subsequence tau_k = round(k * T / K), k = 1..K.
NoiseSchedule respace(const NoiseSchedule& schedule, int count);
/// Respacing onto an explicit strictly increasing subsequence of 1..T ending at T.
NoiseSchedule respace(const NoiseSchedule& schedule, std::span<const int> kept);

/// Coefficients of the Gaussian posterior q(x_{t-1} | x_t, x_0):
/// mean = c_xt * x_t + c_x0 * x_0, variance = var.
PosteriorCoeffs posterior_coeffs(const NoiseSchedule& schedule, int t);

}  // namespace diffcap
