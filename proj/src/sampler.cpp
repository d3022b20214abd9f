#include "opsplit/sampler.hpp"

#include <cmath>
#include <numeric>

#include "opsplit/errors.hpp"
#include "opsplit/parallel.hpp"
#include "opsplit/random.hpp"

namespace opsplit {

namespace {

constexpr double kSumTolerance = 1e-14;
// Rounding slack when comparing accumulated sub-step times to step bounds.
constexpr double kTimeSlack = 1e-12;

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

double snap_time(double t) {
  if (t < 0.0 && t >= -kTimeSlack) return 0.0;
  if (t > 1.0 && t <= 1.0 + kTimeSlack) return 1.0;
  return t;
}

void check_step(double t_n, double h) {
  if (!(h > 0.0)) throw ConfigError("step size must be positive");
  if (!(t_n <= 1.0 && t_n - h >= -kTimeSlack)) {
    throw ConfigError("step [" + std::to_string(t_n - h) + ", " + std::to_string(t_n) + "] leaves [0, 1]");
  }
}

}  // namespace

void SplittingScheme::validate() const {
  if (a.empty() || a.size() != b.size()) throw ConfigError("scheme " + name + ": a and b must have equal nonzero length");
  for (double v : a) {
    if (!std::isfinite(v)) throw ConfigError("scheme " + name + ": non-finite coefficient");
  }
  for (double v : b) {
    if (!std::isfinite(v)) throw ConfigError("scheme " + name + ": non-finite coefficient");
  }
  if (std::abs(sum(a) - 1.0) > kSumTolerance) throw ConfigError("scheme " + name + ": linear fractions do not sum to 1");
  if (std::abs(sum(b) - 1.0) > kSumTolerance) {
    throw ConfigError("scheme " + name + ": nonlinear fractions do not sum to 1");
  }
}

SplittingScheme SplittingScheme::lie() { return {"lie", {1.0}, {1.0}}; }

SplittingScheme SplittingScheme::strang() { return {"strang", {0.5, 0.5}, {1.0, 0.0}}; }

SplittingScheme SplittingScheme::yoshida4() {
  const double w1 = 1.0 / (2.0 - std::cbrt(2.0));
  const double w0 = 1.0 - 2.0 * w1;
  return {"yoshida4", {0.0, w1, w0, w1}, {0.5 * w1, 0.5 * (w1 + w0), 0.5 * (w0 + w1), 0.5 * w1}};
}

SplittingScheme SplittingScheme::by_name(const std::string& name) {
  if (name == "lie") return lie();
  if (name == "strang") return strang();
  if (name == "yoshida4") return yoshida4();
  throw ConfigError("unknown splitting scheme '" + name + "'");
}

void RkTableau::validate() const {
  const auto s = static_cast<Eigen::Index>(b.size());
  if (s == 0 || c.size() != b.size() || a.rows() != s || a.cols() != s) {
    throw ConfigError("tableau " + name + ": inconsistent stage counts");
  }
  if (c[0] != 0.0) throw ConfigError("tableau " + name + ": c_1 must be 0");
  for (Eigen::Index i = 0; i < s; ++i) {
    for (Eigen::Index j = i; j < s; ++j) {
      if (a(i, j) != 0.0) throw ConfigError("tableau " + name + ": stage matrix must be strictly lower triangular");
    }
    if (std::abs(a.row(i).sum() - c[static_cast<std::size_t>(i)]) > kSumTolerance) {
      throw ConfigError("tableau " + name + ": row sums of a must equal c");
    }
  }
  if (std::abs(sum(b) - 1.0) > kSumTolerance) throw ConfigError("tableau " + name + ": weights do not sum to 1");
}

RkTableau RkTableau::euler() { return {"euler", {0.0}, Eigen::MatrixXd::Zero(1, 1), {1.0}, 1}; }

RkTableau RkTableau::midpoint() {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2);
  a(1, 0) = 0.5;
  return {"midpoint", {0.0, 0.5}, a, {0.0, 1.0}, 2};
}

RkTableau RkTableau::rk4() {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 4);
  a(1, 0) = 0.5;
  a(2, 1) = 0.5;
  a(3, 2) = 1.0;
  return {"rk4", {0.0, 0.5, 0.5, 1.0}, a, {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0}, 4};
}

RkTableau RkTableau::by_name(const std::string& name) {
  if (name == "euler") return euler();
  if (name == "midpoint") return midpoint();
  if (name == "rk4") return rk4();
  throw ConfigError("unknown Runge-Kutta tableau '" + name + "'");
}

Eigen::MatrixXd drift_from_score(const ScoreField& field, const Eigen::MatrixXd& x, double t) {
  const ScheduleEval s = eval_schedule(field.schedule(), t);
  return (-0.5 * s.g2) * field.score(x, t);
}

Eigen::MatrixXd drift_from_noise(const ScoreField& field, const Eigen::MatrixXd& x, double t) {
  const ScheduleEval s = eval_schedule(field.schedule(), t);
  return (s.g2 / (2.0 * s.sigma)) * field.noise(x, t);
}

Eigen::MatrixXd drift_b(const ScoreField& field, const Eigen::MatrixXd& x, double t) {
  if (field.prefers_noise_view() && eval_schedule(field.schedule(), t).sigma >= 1e-6) {
    return drift_from_noise(field, x, t);
  }
  return drift_from_score(field, x, t);
}

Eigen::MatrixXd rk_advance(const RkTableau& tableau, const ScoreField& field, const Eigen::MatrixXd& y, double t,
                           double dt) {
  const std::size_t s = tableau.stages();
  std::vector<Eigen::MatrixXd> k(s);
  for (std::size_t i = 0; i < s; ++i) {
    const double stage_time = snap_time(t - tableau.c[i] * dt);
    if (i == 0) {
      k[i] = -drift_b(field, y, stage_time);
      continue;
    }
    Eigen::MatrixXd inc = tableau.a(static_cast<Eigen::Index>(i), 0) * k[0];
    for (std::size_t j = 1; j < i; ++j) inc += tableau.a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * k[j];
    const Eigen::MatrixXd stage_input = y + dt * inc;
    k[i] = -drift_b(field, stage_input, stage_time);
  }
  Eigen::MatrixXd weighted = tableau.b[0] * k[0];
  for (std::size_t i = 1; i < s; ++i) weighted += tableau.b[i] * k[i];
  return y + dt * weighted;
}

Eigen::MatrixXd strang_step(const ScoreField& field, const Eigen::MatrixXd& x_n, double t_n, double h) {
  check_step(t_n, h);
  const LinearBetaSchedule& sched = field.schedule();
  const double t_half = t_n - h / 2;
  const double t_prev = snap_time(t_n - h);
  const Eigen::MatrixXd x_star = x_n * integrating_factor(sched, t_half, t_n);
  const Eigen::MatrixXd k1 = -drift_b(field, x_star, t_n);
  const Eigen::MatrixXd half_k1 = 0.5 * k1;
  const Eigen::MatrixXd k2 = -drift_b(field, x_star + h * half_k1, t_half);
  const Eigen::MatrixXd x_star2 = x_star + h * k2;
  return x_star2 * integrating_factor(sched, t_prev, t_half);
}

Eigen::MatrixXd strang_step_closed_form(const ScoreField& field, const Eigen::MatrixXd& x_n, double t_n, double h) {
  check_step(t_n, h);
  const LinearBetaSchedule& sched = field.schedule();
  const double t_half = t_n - h / 2;
  const double t_prev = snap_time(t_n - h);
  const Eigen::MatrixXd q = integrating_factor(sched, t_half, t_n) * x_n;
  const Eigen::MatrixXd p = q - (h / 2) * drift_b(field, q, t_n);
  return integrating_factor(sched, t_prev, t_n) * x_n -
         (h * integrating_factor(sched, t_prev, t_half)) * drift_b(field, p, t_half);
}

Eigen::MatrixXd lie_step(const ScoreField& field, const Eigen::MatrixXd& x_n, double t_n, double h) {
  check_step(t_n, h);
  const double t_prev = snap_time(t_n - h);
  const Eigen::MatrixXd x_star = x_n * integrating_factor(field.schedule(), t_prev, t_n);
  const Eigen::MatrixXd k1 = -drift_b(field, x_star, t_n);
  return x_star + h * k1;
}

Eigen::MatrixXd composition_step(const SplittingScheme& scheme, const RkTableau& tableau, const ScoreField& field,
                                 const Eigen::MatrixXd& x_n, double t_n, double h) {
  check_step(t_n, h);
  const double lo = t_n - h - kTimeSlack;
  const double hi = t_n + kTimeSlack;
  Eigen::MatrixXd x = x_n;
  double linear_done = 0.0;
  double nonlinear_done = 0.0;
  for (std::size_t m = 0; m < scheme.stages(); ++m) {
    const double lin_from = t_n - linear_done * h;
    linear_done += scheme.a[m];
    const double lin_to = t_n - linear_done * h;
    if (scheme.a[m] != 0.0) x = x * linear_flow_factor(field.schedule(), lin_to, lin_from);

    if (scheme.b[m] != 0.0) {
      const double start = t_n - nonlinear_done * h;
      const double end = t_n - (nonlinear_done + scheme.b[m]) * h;
      if (start < lo || start > hi || end < lo || end > hi) {
        throw ConfigError("scheme " + scheme.name + ": nonlinear sub-step leaves the current time step");
      }
      x = rk_advance(tableau, field, x, snap_time(start), scheme.b[m] * h);
    }
    nonlinear_done += scheme.b[m];
  }
  return x;
}

void SamplerRun::validate() const {
  if (steps < 1) throw ConfigError("sampler: step count must be >= 1");
  if (!field) throw ConfigError("sampler: no score field");
  scheme.validate();
  tableau.validate();
}

double SamplerRun::time(int n) const {
  const double t_lo = t_min();
  if (t_lo == 0.0) return static_cast<double>(n) / steps;
  return (t_lo * (steps - n) + n) / steps;
}

Eigen::MatrixXd integrate_backward(const SamplerRun& run, Eigen::MatrixXd x,
                                   std::vector<Eigen::MatrixXd>* trajectory) {
  run.validate();
  const double h = run.step_size();
  if (trajectory) {
    trajectory->clear();
    trajectory->reserve(static_cast<std::size_t>(run.steps) + 1);
    trajectory->push_back(x);
  }
  for (int n = run.steps; n >= 1; --n) {
    x = composition_step(run.scheme, run.tableau, *run.field, x, run.time(n), h);
    if (trajectory) trajectory->push_back(x);
  }
  return x;
}

SampleSet generate_samples(const SamplerRun& run, Eigen::Index n, std::uint64_t seed) {
  run.validate();
  if (n < 1) throw ConfigError("sampler: need at least one sample");
  const Eigen::Index d = run.field->dim();
  const auto n_chunks = static_cast<std::size_t>((n + kSampleChunk - 1) / kSampleChunk);

  SampleSet out;
  out.points.resize(d, n);
  if (run.record_trajectory) {
    out.trajectory.assign(static_cast<std::size_t>(run.steps) + 1, Eigen::MatrixXd(d, n));
  }
  parallel_for_chunks(n_chunks, [&](std::size_t c) {
    const Eigen::Index first = static_cast<Eigen::Index>(c) * kSampleChunk;
    const Eigen::Index count = std::min(kSampleChunk, n - first);
    Rng rng(derive_seed(seed, "sampler/chunk", c));
    Eigen::MatrixXd x = standard_normal(rng, d, count);
    std::vector<Eigen::MatrixXd> traj;
    x = integrate_backward(run, std::move(x), run.record_trajectory ? &traj : nullptr);
    out.points.middleCols(first, count) = x;
    for (std::size_t k = 0; k < traj.size(); ++k) out.trajectory[k].middleCols(first, count) = traj[k];
  });
  if (!out.points.allFinite()) {
    throw NumericError("sampler produced non-finite states (scheme " + run.scheme.name + ", T = " +
                       std::to_string(run.steps) + ")");
  }
  return out;
}

}  // namespace opsplit
