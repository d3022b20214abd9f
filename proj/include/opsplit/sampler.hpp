#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opsplit/score_field.hpp"

namespace opsplit {

/// Composition x_{n-1} = S_B(-b_K h) e^{-a_K h A} ... S_B(-b_1 h) e^{-a_1 h A} x_n.
/// Each stage first applies the exact linear flow over fraction a_m, then the
/// nonlinear flow over fraction b_m.
struct SplittingScheme {
  std::string name;
  std::vector<double> a;  // linear-step fractions
  std::vector<double> b;  // nonlinear-step fractions

  std::size_t stages() const { return a.size(); }
  /// Equal lengths, finite entries, sum(a) = sum(b) = 1 to 1e-14.
  void validate() const;

  static SplittingScheme lie();
  /// Half linear, full nonlinear, half linear.
  static SplittingScheme strang();
  /// Triple jump w1, w0, w1 over the nonlinear-outer Strang kernel, so every
  /// score evaluation stays inside the current step.
  static SplittingScheme yoshida4();
  static SplittingScheme by_name(const std::string& name);
};

/// Explicit Runge-Kutta tableau.
struct RkTableau {
  std::string name;
  std::vector<double> c;
  Eigen::MatrixXd a;  // strictly lower triangular, s x s
  std::vector<double> b;
  int order = 1;

  std::size_t stages() const { return b.size(); }
  /// c_1 = 0, strictly lower a, row sums of a equal c, sum(b) = 1.
  void validate() const;

  static RkTableau euler();
  static RkTableau midpoint();
  static RkTableau rk4();
  static RkTableau by_name(const std::string& name);
};

/// Nonlinear drift B(t, x) = -1/2 g^2(t) s(x, t). Noise-predictor fields use
/// the equivalent g^2 / (2 sigma) eps(x, t) whenever sigma(t) >= 1e-6.
Eigen::MatrixXd drift_b(const ScoreField& field, const Eigen::MatrixXd& x, double t);
Eigen::MatrixXd drift_from_score(const ScoreField& field, const Eigen::MatrixXd& x, double t);
Eigen::MatrixXd drift_from_noise(const ScoreField& field, const Eigen::MatrixXd& x, double t);

/// y + dt sum_i b_i k_i with k_i = -B(t - c_i dt, y + dt sum_j a_ij k_j).
/// Positive dt marches backward in time.
Eigen::MatrixXd rk_advance(const RkTableau& tableau, const ScoreField& field, const Eigen::MatrixXd& y, double t,
                           double dt);

/// One Strang + midpoint step from t_n to t_n - h, written as the five-line update.
Eigen::MatrixXd strang_step(const ScoreField& field, const Eigen::MatrixXd& x_n, double t_n, double h);
/// The same step as a single expression:
///   m(t_{n-1}, t_n) x_n - h m(t_{n-1}, t_{n-1/2}) B(t_{n-1/2}, p),
///   p = m(t_{n-1/2}, t_n) x_n - h/2 B(t_n, m(t_{n-1/2}, t_n) x_n).
Eigen::MatrixXd strang_step_closed_form(const ScoreField& field, const Eigen::MatrixXd& x_n, double t_n, double h);
/// Full linear step, then one explicit Euler step of the nonlinear flow.
Eigen::MatrixXd lie_step(const ScoreField& field, const Eigen::MatrixXd& x_n, double t_n, double h);

/// Generic K-stage composition. Throws ConfigError if a nonlinear sub-step
/// leaves [t_n - h, t_n]. Linear sub-steps use the closed-form alpha ratio and
/// may overshoot the step (negative fractions).
Eigen::MatrixXd composition_step(const SplittingScheme& scheme, const RkTableau& tableau, const ScoreField& field,
                                 const Eigen::MatrixXd& x_n, double t_n, double h);

struct SamplerRun {
  int steps = 128;
  SplittingScheme scheme = SplittingScheme::strang();
  RkTableau tableau = RkTableau::midpoint();
  std::shared_ptr<const ScoreField> field;
  bool record_trajectory = false;

  void validate() const;
  double t_min() const { return field->schedule().t_min; }
  double step_size() const { return (1.0 - t_min()) / steps; }
  /// Grid time t_n, n = 0..steps, with t_steps = 1 and t_0 = t_min.
  double time(int n) const;
};

struct SampleSet {
  Eigen::MatrixXd points;  // d x n, states at t_min
  /// Entry k holds every particle after k steps (time run.time(steps - k)).
  std::vector<Eigen::MatrixXd> trajectory;
};

/// Integrates the columns of x (states at t = 1) down to t_min.
Eigen::MatrixXd integrate_backward(const SamplerRun& run, Eigen::MatrixXd x,
                                   std::vector<Eigen::MatrixXd>* trajectory = nullptr);

/// Particles per RNG stream; fixed so results do not depend on thread count.
inline constexpr Eigen::Index kSampleChunk = 512;

/// n standard-normal starting points, integrated backward. Deterministic in
/// (run, n, seed). Throws NumericError if any particle becomes non-finite.
SampleSet generate_samples(const SamplerRun& run, Eigen::Index n, std::uint64_t seed);

}  // namespace opsplit
