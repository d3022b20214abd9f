#pragma once

namespace opsplit {

/// Variance-preserving schedule with linear rate beta(t) = beta0 + (beta1 - beta0) t.
///
/// alpha(t) = exp(-1/2 * int_0^t beta), sigma(t) = sqrt(1 - alpha(t)^2). Backward
/// integration runs from t = 1 down to t_min.
struct LinearBetaSchedule {
  double beta0 = 0.1;
  double beta1 = 20.0;
  double t_min = 0.0;

  /// Throws ConfigError if beta0 <= 0, beta1 < beta0 or t_min outside [0, 1).
  void validate() const;

  double beta(double t) const { return beta0 + (beta1 - beta0) * t; }
  /// int_0^t beta(s) ds.
  double integrated_beta(double t) const { return beta0 * t + 0.5 * (beta1 - beta0) * t * t; }
  /// log alpha(t); the closed form is valid for every real t.
  double log_alpha(double t) const { return -0.5 * integrated_beta(t); }
};

struct ScheduleEval {
  double t = 0.0;
  double alpha = 1.0;
  double sigma = 0.0;
  double f = 0.0;   // d log(alpha) / dt
  double g2 = 0.0;  // d sigma^2/dt - 2 f sigma^2
};

/// Throws DomainError if t is outside [0, 1].
ScheduleEval eval_schedule(const LinearBetaSchedule& sched, double t);

/// m_f(t, s) = exp(int_s^t f) = alpha(t) / alpha(s). Both times must lie in [0, 1].
double integrating_factor(const LinearBetaSchedule& sched, double t, double s);

/// Same closed form as integrating_factor without the domain check. Composition
/// schemes with negative sub-steps (Yoshida) move the linear clock slightly past
/// the ends of [0, 1]; alpha is analytic there.
double linear_flow_factor(const LinearBetaSchedule& sched, double t, double s);

}  // namespace opsplit
