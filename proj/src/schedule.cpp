#include "opsplit/schedule.hpp"

#include <cmath>
#include <string>

#include "opsplit/errors.hpp"

namespace opsplit {

namespace {

void check_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError(std::string(what) + ": time " + std::to_string(t) + " outside [0, 1]");
  }
}

double alpha_of(const LinearBetaSchedule& sched, double t) { return std::exp(sched.log_alpha(t)); }

}  // namespace

void LinearBetaSchedule::validate() const {
  if (!(beta0 > 0.0)) throw ConfigError("schedule: beta0 must be positive");
  if (!(beta1 >= beta0)) throw ConfigError("schedule: beta1 must be >= beta0");
  if (!(t_min >= 0.0 && t_min < 1.0)) throw ConfigError("schedule: t_min must lie in [0, 1)");
}

ScheduleEval eval_schedule(const LinearBetaSchedule& sched, double t) {
  check_time(t, "eval_schedule");
  ScheduleEval out;
  out.t = t;
  out.alpha = alpha_of(sched, t);
  // 1 - alpha^2 = -expm1(2 log alpha) keeps sigma accurate near t = 0.
  const double sigma2 = -std::expm1(2.0 * sched.log_alpha(t));
  out.sigma = std::sqrt(sigma2);
  const double b = sched.beta(t);
  out.f = -0.5 * b;
  // d sigma^2/dt = beta alpha^2 and -2 f sigma^2 = beta sigma^2, so g^2 = beta.
  out.g2 = b;
  return out;
}

double integrating_factor(const LinearBetaSchedule& sched, double t, double s) {
  check_time(t, "integrating_factor");
  check_time(s, "integrating_factor");
  return linear_flow_factor(sched, t, s);
}

double linear_flow_factor(const LinearBetaSchedule& sched, double t, double s) {
  return alpha_of(sched, t) / alpha_of(sched, s);
}

}  // namespace opsplit
