#include "opsplit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "opsplit/errors.hpp"
#include "opsplit/parallel.hpp"

namespace opsplit {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Queries per parallel work unit in KDE evaluation.
constexpr std::size_t kQueryChunk = 1024;
// Monte Carlo points per RNG stream in TV estimation.
constexpr Eigen::Index kMcChunk = 4096;

/// |p - q| / (p + q) from log densities.
double tv_integrand(double log_p, double log_q) {
  if (log_p == log_q) return 0.0;  // also covers both -inf
  if (std::isinf(log_p) || std::isinf(log_q)) return 1.0;
  return std::tanh(0.5 * std::abs(log_p - log_q));
}

}  // namespace

GaussianDensity::GaussianDensity(Eigen::VectorXd mean, Eigen::MatrixXd cov)
    : mean_(std::move(mean)), cov_(std::move(cov)) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  if (llt.info() != Eigen::Success || cov_.rows() != mean_.size()) {
    throw NumericError("gaussian density: covariance is not positive definite");
  }
  chol_ = llt.matrixL();
  log_norm_ = -0.5 * static_cast<double>(mean_.size()) * kLog2Pi - chol_.diagonal().array().log().sum();
}

Eigen::VectorXd GaussianDensity::log_pdf(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd z = chol_.triangularView<Eigen::Lower>().solve(x.colwise() - mean_);
  return (log_norm_ - 0.5 * z.colwise().squaredNorm().array()).matrix().transpose();
}

Eigen::MatrixXd GaussianDensity::sample(Rng& rng, Eigen::Index n) const {
  return (chol_ * standard_normal(rng, dim(), n)).colwise() + mean_;
}

const char* to_string(BandwidthRule rule) {
  switch (rule) {
    case BandwidthRule::scott:
      return "scott";
  }
  return "unknown";
}

BandwidthRule bandwidth_rule_from_string(const std::string& name) {
  if (name == "scott") return BandwidthRule::scott;
  throw ConfigError("unknown bandwidth rule '" + name + "'");
}

KdeModel::KdeModel(Eigen::MatrixXd points, Eigen::VectorXd bandwidth, BandwidthRule rule)
    : points_(std::move(points)), bandwidth_(std::move(bandwidth)), rule_(rule) {
  const Eigen::Index d = points_.rows();
  const Eigen::Index n = points_.cols();
  if (n < 2) throw ConfigError("kde: need at least 2 points");
  if (bandwidth_.size() != d || !(bandwidth_.array() > 0.0).all()) throw ConfigError("kde: bandwidths must be positive");
  scaled_.assign(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(n)));
  for (Eigen::Index k = 0; k < d; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) scaled_[k][j] = points_(k, j) / bandwidth_(k);
  }
  log_norm_ = -std::log(static_cast<double>(n)) - 0.5 * static_cast<double>(d) * kLog2Pi -
              bandwidth_.array().log().sum();
}

Eigen::VectorXd KdeModel::log_pdf(const Eigen::MatrixXd& x) const {
  const Eigen::Index d = dim();
  if (x.rows() != d) throw ConfigError("kde: query dimension mismatch");
  const auto m = static_cast<std::size_t>(x.cols());
  std::vector<std::vector<double>> queries(static_cast<std::size_t>(d), std::vector<double>(m));
  for (Eigen::Index k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < m; ++i) queries[k][i] = x(k, static_cast<Eigen::Index>(i)) / bandwidth_(k);
  }
  std::vector<double> sums(m);
  parallel_for_chunks((m + kQueryChunk - 1) / kQueryChunk, [&](std::size_t c) {
    const std::size_t first = c * kQueryChunk;
    detail::kernel_sums(scaled_, queries, first, std::min(kQueryChunk, m - first), sums.data() + first);
  });

  Eigen::VectorXd out(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    if (sums[i] > 0.0 && std::isfinite(sums[i])) {
      out(static_cast<Eigen::Index>(i)) = log_norm_ + std::log(sums[i]);
      continue;
    }
    // Every kernel underflowed: exact log-sum-exp.
    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(static_cast<std::size_t>(size()));
    for (Eigen::Index j = 0; j < size(); ++j) {
      double r2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = queries[k][i] - scaled_[k][j];
        r2 += diff * diff;
      }
      terms[j] = -0.5 * r2;
      max_term = std::max(max_term, terms[j]);
    }
    double acc = 0.0;
    for (double v : terms) acc += std::exp(v - max_term);
    out(static_cast<Eigen::Index>(i)) = log_norm_ + max_term + std::log(acc);
  }
  return out;
}

Eigen::MatrixXd KdeModel::sample(Rng& rng, Eigen::Index n) const {
  std::uniform_int_distribution<Eigen::Index> pick(0, size() - 1);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(dim(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = pick(rng);
    for (Eigen::Index k = 0; k < dim(); ++k) out(k, j) = points_(k, src) + bandwidth_(k) * normal(rng);
  }
  return out;
}

KdeModel kde_fit(const Eigen::MatrixXd& samples, BandwidthRule rule) {
  const Eigen::Index d = samples.rows();
  const Eigen::Index n = samples.cols();
  if (n < 2 || d < 1) throw ConfigError("kde_fit: need at least 2 samples");
  if (!samples.allFinite()) throw ConfigError("kde_fit: non-finite samples");
  const Eigen::VectorXd mean = samples.rowwise().mean();
  const Eigen::VectorXd var =
      (samples.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(n - 1);
  if (!(var.array() > 0.0).all()) throw NumericError("kde_fit: a dimension has zero variance");
  const double factor = std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
  return KdeModel(samples, factor * var.cwiseSqrt(), rule);
}

TvEstimate tv_monte_carlo(const Density& p, const Density& q, Eigen::Index n_mc, std::uint64_t seed) {
  if (n_mc < 1000) throw ConfigError("tv_monte_carlo: need at least 1000 Monte Carlo points");
  if (p.dim() != q.dim()) throw ConfigError("tv_monte_carlo: dimension mismatch");

  struct Half {
    const Density* source;
    const char* label;
    Eigen::Index count;
    double sum = 0.0;
    double sum_sq = 0.0;
  };
  Half halves[2] = {{&p, "tv/first", n_mc / 2}, {&q, "tv/second", n_mc - n_mc / 2}};

  for (Half& half : halves) {
    const auto n_chunks = static_cast<std::size_t>((half.count + kMcChunk - 1) / kMcChunk);
    std::vector<double> sums(n_chunks), sums_sq(n_chunks);
    for (std::size_t c = 0; c < n_chunks; ++c) {
      const Eigen::Index count = std::min(kMcChunk, half.count - static_cast<Eigen::Index>(c) * kMcChunk);
      Rng rng(derive_seed(seed, half.label, c));
      const Eigen::MatrixXd x = half.source->sample(rng, count);
      const Eigen::VectorXd lp = p.log_pdf(x);
      const Eigen::VectorXd lq = q.log_pdf(x);
      for (Eigen::Index i = 0; i < count; ++i) {
        const double r = tv_integrand(lp(i), lq(i));
        sums[c] += r;
        sums_sq[c] += r * r;
      }
    }
    for (std::size_t c = 0; c < n_chunks; ++c) {
      half.sum += sums[c];
      half.sum_sq += sums_sq[c];
    }
  }

  TvEstimate est;
  est.n_mc = n_mc;
  est.seed = seed;
  double variance = 0.0;
  for (const Half& half : halves) {
    const auto n = static_cast<double>(half.count);
    const double mean = half.sum / n;
    est.raw_value += 0.5 * mean;
    const double var = std::max(0.0, (half.sum_sq - n * mean * mean) / (n - 1.0));
    variance += 0.25 * var / n;
  }
  est.std_error = std::sqrt(variance);
  est.value = std::clamp(est.raw_value, 0.0, 1.0);
  return est;
}

std::vector<Eigen::MatrixXd> reference_trajectory(const ScoreField& field, Eigen::MatrixXd x, int steps,
                                                  int keep_every) {
  if (steps < 1 || keep_every < 1 || steps % keep_every != 0) {
    throw ConfigError("reference_trajectory: steps must be a positive multiple of keep_every");
  }
  const LinearBetaSchedule& sched = field.schedule();
  const double t_lo = sched.t_min;
  const auto time = [&](int k) {
    return t_lo == 0.0 ? static_cast<double>(k) / steps : (t_lo * (steps - k) + k) / steps;
  };
  const auto rhs = [&](double t, const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
    t = std::clamp(t, 0.0, 1.0);
    return eval_schedule(sched, t).f * y + drift_b(field, y, t);
  };
  const double dt = -(1.0 - t_lo) / steps;
  std::vector<Eigen::MatrixXd> kept{x};
  for (int k = steps; k >= 1; --k) {
    const double t = time(k);
    const Eigen::MatrixXd k1 = rhs(t, x);
    const Eigen::MatrixXd k2 = rhs(t + 0.5 * dt, x + (0.5 * dt) * k1);
    const Eigen::MatrixXd k3 = rhs(t + 0.5 * dt, x + (0.5 * dt) * k2);
    const Eigen::MatrixXd k4 = rhs(time(k - 1), x + dt * k3);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if ((k - 1) % keep_every == 0) kept.push_back(x);
  }
  return kept;
}

TrajectoryError trajectory_global_error(const SamplerRun& run, int ref_steps, Eigen::Index n_probe,
                                        std::uint64_t seed) {
  run.validate();
  if (n_probe < 1) throw ConfigError("trajectory_global_error: need at least one probe");
  if (ref_steps < 16 * run.steps || ref_steps % run.steps != 0) {
    throw ConfigError("trajectory_global_error: reference steps must be a multiple of T and at least 16 T");
  }
  Rng rng(derive_seed(seed, "trajectory/probes"));
  const Eigen::MatrixXd start = standard_normal(rng, run.field->dim(), n_probe);

  std::vector<Eigen::MatrixXd> numeric;
  integrate_backward(run, start, &numeric);
  const auto reference = reference_trajectory(*run.field, start, ref_steps, ref_steps / run.steps);

  TrajectoryError out;
  for (std::size_t k = 0; k < numeric.size(); ++k) {
    out.max_error = std::max(out.max_error, (numeric[k] - reference[k]).colwise().norm().maxCoeff());
  }
  const int half_steps = ref_steps / 2;
  const auto coarse = reference_trajectory(*run.field, start, half_steps, half_steps);
  out.reference_shift = (coarse.back() - reference.back()).colwise().norm().maxCoeff();
  if (out.reference_shift > std::max(0.01 * out.max_error, 1e-12)) {
    throw NumericError("trajectory_global_error: reference not resolved at " + std::to_string(ref_steps) +
                       " steps (shift " + std::to_string(out.reference_shift) + ", error " +
                       std::to_string(out.max_error) + ")");
  }
  return out;
}

LogLogFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw ConfigError("fit_loglog_slope: need at least 3 points");
  const auto n = static_cast<double>(points.size());
  std::vector<double> lx, ly;
  for (const auto& [h, v] : points) {
    if (!(h > 0.0) || !(v > 0.0)) throw ConfigError("fit_loglog_slope: step sizes and values must be positive");
    lx.push_back(std::log(h));
    ly.push_back(std::log(v));
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0.0) throw NumericError("fit_loglog_slope: all step sizes are equal");
  LogLogFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (std::size_t i = 0; i < lx.size(); ++i) fit.residuals.push_back(ly[i] - (fit.intercept + fit.slope * lx[i]));
  return fit;
}

std::vector<double> uniform_time_grid(int n, double lo, double hi) {
  if (n < 1 || !(lo >= 0.0 && hi <= 1.0 && lo <= hi)) throw ConfigError("time grid must be a non-empty subset of [0, 1]");
  std::vector<double> grid;
  for (int i = 0; i < n; ++i) grid.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1));
  return grid;
}

double operator_norm(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

namespace {

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("score error: empty time grid");
  for (double t : grid) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("score error: grid time outside [0, 1]");
  }
}

}  // namespace

double epsilon_score_estimate(const ScoreField& field_a, const ScoreField& field_b, const GaussianData& data,
                              const LinearBetaSchedule& sched, const std::vector<double>& time_grid,
                              Eigen::Index n_mc, std::uint64_t seed) {
  check_grid(time_grid);
  if (n_mc < 1) throw ConfigError("score error: n_mc must be positive");
  double sup = 0.0;
  for (std::size_t i = 0; i < time_grid.size(); ++i) {
    const double t = time_grid[i];
    Rng rng(derive_seed(seed, "eps_score", i));
    const Eigen::MatrixXd x = GaussianDensity(marginal_law(data, sched, t)).sample(rng, n_mc);
    const double mean_sq = (field_a.score(x, t) - field_b.score(x, t)).colwise().squaredNorm().mean();
    sup = std::max(sup, std::sqrt(mean_sq));
  }
  return sup;
}

double epsilon_jacobian_estimate(const ScoreField& field_a, const ScoreField& field_b, const GaussianData& data,
                                 const LinearBetaSchedule& sched, const std::vector<double>& time_grid,
                                 Eigen::Index n_mc, std::uint64_t seed) {
  check_grid(time_grid);
  if (n_mc < 1) throw ConfigError("score error: n_mc must be positive");
  double sup = 0.0;
  for (std::size_t i = 0; i < time_grid.size(); ++i) {
    const double t = time_grid[i];
    Rng rng(derive_seed(seed, "eps_jac", i));
    const Eigen::MatrixXd x = GaussianDensity(marginal_law(data, sched, t)).sample(rng, n_mc);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n_mc; ++j) {
      const Eigen::VectorXd xj = x.col(j);
      acc += operator_norm(field_a.jacobian(xj, t) - field_b.jacobian(xj, t));
    }
    sup = std::max(sup, acc / static_cast<double>(n_mc));
  }
  return sup;
}

ScoreErrorReport score_error_report(const ScoreField& field, const ScoreField& reference, const GaussianData& data,
                                    const LinearBetaSchedule& sched, const std::vector<double>& time_grid,
                                    Eigen::Index n_mc, std::uint64_t seed, bool with_jacobian) {
  ScoreErrorReport r;
  r.n_mc = n_mc;
  r.time_grid = time_grid;
  r.eps_score = epsilon_score_estimate(field, reference, data, sched, time_grid, n_mc, seed);
  r.eps_jac = with_jacobian ? epsilon_jacobian_estimate(field, reference, data, sched, time_grid, n_mc, seed)
                            : std::nan("");
  return r;
}

}  // namespace opsplit
