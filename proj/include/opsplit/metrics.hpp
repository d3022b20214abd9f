#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "opsplit/random.hpp"
#include "opsplit/sampler.hpp"
#include "opsplit/score_field.hpp"

namespace opsplit {

/// A probability density on R^d that can be evaluated and sampled.
class Density {
 public:
  virtual ~Density() = default;
  virtual Eigen::Index dim() const = 0;
  /// log density at each column of x.
  virtual Eigen::VectorXd log_pdf(const Eigen::MatrixXd& x) const = 0;
  virtual Eigen::MatrixXd sample(Rng& rng, Eigen::Index n) const = 0;
};

class GaussianDensity final : public Density {
 public:
  GaussianDensity(Eigen::VectorXd mean, Eigen::MatrixXd cov);
  explicit GaussianDensity(const MarginalLaw& law) : GaussianDensity(law.mean, law.cov) {}

  Eigen::Index dim() const override { return mean_.size(); }
  Eigen::VectorXd log_pdf(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd sample(Rng& rng, Eigen::Index n) const override;

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;  // lower factor
  double log_norm_ = 0.0;
};

enum class BandwidthRule { scott };

const char* to_string(BandwidthRule rule);
BandwidthRule bandwidth_rule_from_string(const std::string& name);

/// Gaussian product-kernel density estimate with one bandwidth per dimension.
class KdeModel final : public Density {
 public:
  KdeModel(Eigen::MatrixXd points, Eigen::VectorXd bandwidth, BandwidthRule rule);

  Eigen::Index dim() const override { return points_.rows(); }
  Eigen::Index size() const { return points_.cols(); }
  Eigen::VectorXd log_pdf(const Eigen::MatrixXd& x) const override;
  /// Picks a data point uniformly and adds kernel noise.
  Eigen::MatrixXd sample(Rng& rng, Eigen::Index n) const override;

  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::VectorXd& bandwidth() const { return bandwidth_; }
  BandwidthRule rule() const { return rule_; }

 private:
  Eigen::MatrixXd points_;  // d x n
  Eigen::VectorXd bandwidth_;
  BandwidthRule rule_;
  // Points divided by their bandwidth, one contiguous array per dimension.
  std::vector<std::vector<double>> scaled_;
  double log_norm_ = 0.0;
};

/// Scott's rule: bandwidth_k = n^(-1/(d+4)) * sd_k. Throws ConfigError for
/// n < 2 or non-finite samples, NumericError when a dimension has zero variance.
KdeModel kde_fit(const Eigen::MatrixXd& samples, BandwidthRule rule = BandwidthRule::scott);

struct TvEstimate {
  double value = 0.0;      // clamped to [0, 1]
  double raw_value = 0.0;  // before clamping
  double std_error = 0.0;
  Eigen::Index n_mc = 0;
  std::uint64_t seed = 0;
};

/// TV(p, q) = 1/2 int |p - q| by importance sampling from (p + q) / 2: half the
/// points are drawn from each density and the integrand |p - q| / (p + q) is
/// formed in log space. Requires n_mc >= 1000.
TvEstimate tv_monte_carlo(const Density& p, const Density& q, Eigen::Index n_mc, std::uint64_t seed);

struct TrajectoryError {
  double max_error = 0.0;
  /// max over probes of the endpoint change when the reference uses ref_T / 2 steps.
  double reference_shift = 0.0;
};

/// Max over probes and shared grid times of |x(t_n) - x_n| against a classical
/// RK4 solve of the full PF-ODE with ref_steps steps. ref_steps must be a
/// multiple of run.steps and at least 16x it. Throws NumericError if the
/// reference endpoint moves by more than 1% of the measured error (or 1e-12)
/// when its resolution is halved.
TrajectoryError trajectory_global_error(const SamplerRun& run, int ref_steps, Eigen::Index n_probe,
                                        std::uint64_t seed);

/// Classical RK4 on dx/dt = f(t) x + B(t, x) from t = 1 down to t_min, keeping
/// every keep_every-th state (including both ends).
std::vector<Eigen::MatrixXd> reference_trajectory(const ScoreField& field, Eigen::MatrixXd x, int steps,
                                                  int keep_every);

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> residuals;
};

/// Least squares of log(value) on log(h). Needs >= 3 points with positive
/// values; ConfigError otherwise, NumericError if every h is equal.
LogLogFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points);

/// Uniform grid of n points on [lo, hi].
std::vector<double> uniform_time_grid(int n = 21, double lo = 0.0, double hi = 1.0);

/// max over the grid of (E_{x ~ q(., t)} |s_a(x, t) - s_b(x, t)|^2)^{1/2}.
double epsilon_score_estimate(const ScoreField& field_a, const ScoreField& field_b, const GaussianData& data,
                              const LinearBetaSchedule& sched, const std::vector<double>& time_grid,
                              Eigen::Index n_mc, std::uint64_t seed);

/// max over the grid of E_{x ~ q(., t)} |J s_a(x, t) - J s_b(x, t)|_op.
double epsilon_jacobian_estimate(const ScoreField& field_a, const ScoreField& field_b, const GaussianData& data,
                                 const LinearBetaSchedule& sched, const std::vector<double>& time_grid,
                                 Eigen::Index n_mc, std::uint64_t seed);

struct ScoreErrorReport {
  double eps_score = 0.0;
  double eps_jac = 0.0;  // NaN when not requested
  Eigen::Index n_mc = 0;
  std::vector<double> time_grid;
};

/// Both estimates on the same grid and seed; the Jacobian term is optional
/// because finite-difference Jacobians of large networks are slow.
ScoreErrorReport score_error_report(const ScoreField& field, const ScoreField& reference, const GaussianData& data,
                                    const LinearBetaSchedule& sched, const std::vector<double>& time_grid,
                                    Eigen::Index n_mc, std::uint64_t seed, bool with_jacobian = true);

/// Spectral norm (largest singular value).
double operator_norm(const Eigen::MatrixXd& m);

namespace detail {
/// out[i] = sum_j exp(-|query_i - point_j|^2 / 2) with both sides already
/// divided by the bandwidth. points[k] and queries[k] hold coordinate k.
void kernel_sums(const std::vector<std::vector<double>>& points, const std::vector<std::vector<double>>& queries,
                 std::size_t first, std::size_t count, double* out);
}  // namespace detail

}  // namespace opsplit
