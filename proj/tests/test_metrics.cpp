#include <doctest.h>

#include <cmath>
#include <numbers>

#include "opsplit/errors.hpp"
#include "opsplit/metrics.hpp"

using namespace opsplit;

namespace {

double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double x, double m) { return std::exp(-0.5 * (x - m) * (x - m)) / std::sqrt(2.0 * std::numbers::pi); }

Eigen::MatrixXd row(std::initializer_list<double> v) {
  Eigen::MatrixXd m(1, v.size());
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

GaussianDensity normal_1d(double mean) {
  return GaussianDensity(Eigen::VectorXd::Constant(1, mean), Eigen::MatrixXd::Identity(1, 1));
}

std::shared_ptr<const ScoreField> testbed_field() {
  return std::make_shared<ExactGaussianScore>(GaussianData::testbed_2d(), LinearBetaSchedule{});
}

}  // namespace

TEST_CASE("gaussian density") {
  const GaussianDensity g = normal_1d(0.5);
  CHECK(std::exp(g.log_pdf(row({0.5}))(0)) == doctest::Approx(normal_pdf(0.5, 0.5)).epsilon(1e-14));
  CHECK(std::exp(g.log_pdf(row({-1.0}))(0)) == doctest::Approx(normal_pdf(-1.0, 0.5)).epsilon(1e-14));
  CHECK_THROWS_AS(GaussianDensity(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2)), NumericError);
}

TEST_CASE("kde bandwidth and density") {
  // Two points at -1 and 1: sample sd sqrt(2), Scott factor 2^(-1/5).
  const KdeModel two = kde_fit(row({-1.0, 1.0}));
  const double h = std::pow(2.0, -0.2) * std::sqrt(2.0);
  CHECK(two.bandwidth()(0) == doctest::Approx(h).epsilon(1e-14));
  const double expect = normal_pdf(1.0 / h, 0.0) / h;
  CHECK(std::exp(two.log_pdf(row({0.0}))(0)) == doctest::Approx(expect).epsilon(1e-12));

  // 64 points in 2-D: factor 64^(-1/6) = 1/2.
  Rng rng(1);
  const Eigen::MatrixXd pts = standard_normal(rng, 2, 64);
  const KdeModel k64 = kde_fit(pts);
  const Eigen::VectorXd mean = pts.rowwise().mean();
  for (int i = 0; i < 2; ++i) {
    const double sd = std::sqrt((pts.row(i).array() - mean(i)).square().sum() / 63.0);
    CHECK(k64.bandwidth()(i) == doctest::Approx(0.5 * sd).epsilon(1e-14));
  }

  // Far-away query still gives a finite log density.
  CHECK(std::isfinite(two.log_pdf(row({1e3}))(0)));

  Rng rng2(2);
  const KdeModel big = kde_fit(standard_normal(rng2, 1, 20000));
  CHECK(std::exp(big.log_pdf(row({0.0}))(0)) == doctest::Approx(normal_pdf(0.0, 0.0)).epsilon(0.05));
  CHECK(big.sample(rng2, 10).cols() == 10);

  CHECK_THROWS_AS(kde_fit(row({1.0})), ConfigError);
  CHECK_THROWS_AS(kde_fit(row({2.0, 2.0, 2.0})), NumericError);
  CHECK_THROWS_AS(kde_fit(row({0.0, std::nan("")})), ConfigError);
  CHECK_THROWS_AS(bandwidth_rule_from_string("silverman"), ConfigError);
}

TEST_CASE("kernel sums are exact on a tiny set") {
  const std::vector<std::vector<double>> pts{{0.0, 1.0, 3.0}};
  const std::vector<std::vector<double>> q{{0.5, 2.0}};
  double out[2];
  detail::kernel_sums(pts, q, 0, 2, out);
  for (int i = 0; i < 2; ++i) {
    double ref = 0.0;
    for (double p : pts[0]) ref += std::exp(-0.5 * (q[0][i] - p) * (q[0][i] - p));
    CHECK(out[i] == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("tv between unit normals one apart") {
  // Closed form 2 Phi(1/2) - 1, cross-checked by the trapezoid rule.
  const double closed = 2.0 * phi_cdf(0.5) - 1.0;
  double trap = 0.0;
  const double lo = -12.0, hi = 13.0, dx = 1e-3;
  for (double x = lo; x < hi; x += dx) {
    trap += 0.25 * dx * (std::abs(normal_pdf(x, 0) - normal_pdf(x, 1)) + std::abs(normal_pdf(x + dx, 0) - normal_pdf(x + dx, 1)));
  }
  CHECK(trap == doctest::Approx(closed).epsilon(1e-6));
  CHECK(closed == doctest::Approx(0.3829).epsilon(1e-3));

  const GaussianDensity p = normal_1d(0.0), q = normal_1d(1.0);
  const TvEstimate est = tv_monte_carlo(p, q, 100000, 7);
  CHECK(std::abs(est.value - closed) <= 0.01);
  CHECK(std::abs(est.value - closed) <= 4.0 * est.std_error);
  CHECK(est.std_error > 0.0);

  const TvEstimate same = tv_monte_carlo(q, q, 10000, 7);
  CHECK(same.value == 0.0);
  CHECK(same.raw_value == 0.0);

  const TvEstimate swapped = tv_monte_carlo(q, p, 100000, 8);
  CHECK(std::abs(swapped.value - est.value) <= 4.0 * std::hypot(est.std_error, swapped.std_error));

  const TvEstimate small = tv_monte_carlo(p, q, 10000, 9);
  const TvEstimate large = tv_monte_carlo(p, q, 40000, 10);
  CHECK(std::abs(small.value - large.value) <= 3.0 * std::hypot(small.std_error, large.std_error));

  CHECK(tv_monte_carlo(p, q, 5000, 3).raw_value == tv_monte_carlo(p, q, 5000, 3).raw_value);
  CHECK_THROWS_AS(tv_monte_carlo(p, q, 999, 1), ConfigError);
}

TEST_CASE("kde of target draws is close to the target") {
  const GaussianData data = GaussianData::testbed_2d();
  const GaussianDensity target(data.mu, data.sigma_mat);
  Rng rng(11);
  const KdeModel kde = kde_fit(target.sample(rng, 100000));
  const TvEstimate est = tv_monte_carlo(target, kde, 20000, 12);
  MESSAGE("kde floor " << est.value << " +- " << est.std_error);
  CHECK(est.value <= 0.03);
}

TEST_CASE("trajectory error") {
  const LinearBetaSchedule sched;
  SamplerRun run;
  run.field = make_zero_score(2, sched);
  run.steps = 16;
  // Zero score: the reference reproduces the linear factor.
  const auto lin = reference_trajectory(*run.field, Eigen::Vector2d(1.0, -2.0), 4096, 4096);
  const double r = eval_schedule(sched, 0.0).alpha / eval_schedule(sched, 1.0).alpha;
  CHECK((lin.back() - r * Eigen::Vector2d(1.0, -2.0)).norm() <= 1e-10 * r);

  run.field = testbed_field();
  run.steps = 32;
  const double s32 = trajectory_global_error(run, 64 * 32, 16, 2).max_error;
  run.steps = 64;
  const double s64 = trajectory_global_error(run, 64 * 64, 16, 2).max_error;
  MESSAGE("strang ratio " << s32 / s64);
  CHECK(s32 / s64 >= 3.3);
  CHECK(s32 / s64 <= 4.7);

  run.scheme = SplittingScheme::lie();
  run.tableau = RkTableau::euler();
  double prev = 1e300;
  std::vector<double> lie;
  for (int T : {16, 32, 64}) {
    run.steps = T;
    lie.push_back(trajectory_global_error(run, 64 * T, 16, 2).max_error);
    CHECK(lie.back() <= prev);
    prev = lie.back();
  }
  MESSAGE("lie ratio " << lie[1] / lie[2]);
  CHECK(lie[1] / lie[2] >= 1.7);
  CHECK(lie[1] / lie[2] <= 2.3);

  // RK4 reference against the 1-D closed form.
  const double s2 = 2.0;
  const ExactGaussianScore one(GaussianData{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, s2)}, sched);
  const auto ref = reference_trajectory(one, Eigen::MatrixXd::Constant(1, 1, 1.0), 512, 512);
  const double a2 = std::exp(-sched.integrated_beta(0.0));
  const double v0 = a2 * s2 + 1.0 - a2, v1 = std::exp(-sched.integrated_beta(1.0)) * (s2 - 1.0) + 1.0;
  CHECK(ref.back()(0, 0) == doctest::Approx(std::sqrt(v0 / v1)).epsilon(1e-10));

  run.steps = 16;
  CHECK_THROWS_AS(trajectory_global_error(run, 128, 4, 1), ConfigError);
  CHECK_THROWS_AS(trajectory_global_error(run, 16 * 16 + 8, 4, 1), ConfigError);
}

TEST_CASE("log-log slope fit") {
  for (double p : {1.0, 2.0, 3.0}) {
    std::vector<std::pair<double, double>> pts;
    for (double h : {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64}) pts.emplace_back(h, 0.7 * std::pow(h, p));
    const LogLogFit fit = fit_loglog_slope(pts);
    CHECK(std::abs(fit.slope - p) <= 1e-12);
    CHECK(std::abs(fit.intercept - std::log(0.7)) <= 1e-12);
  }
  CHECK_THROWS_AS(fit_loglog_slope({{0.1, 1.0}, {0.1, 2.0}, {0.1, 3.0}}), NumericError);
  CHECK_THROWS_AS(fit_loglog_slope({{0.1, 1.0}, {0.2, 2.0}}), ConfigError);
  CHECK_THROWS_AS(fit_loglog_slope({{0.1, 1.0}, {0.2, 0.0}, {0.3, 1.0}}), ConfigError);
}

TEST_CASE("score and jacobian error estimates") {
  const LinearBetaSchedule sched;
  const GaussianData data = GaussianData::testbed_2d();
  const auto exact = testbed_field();
  const auto grid = uniform_time_grid();
  REQUIRE(grid.size() == 21);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 1.0);

  CHECK(epsilon_score_estimate(*exact, *exact, data, sched, grid, 500, 1) == 0.0);
  CHECK(epsilon_jacobian_estimate(*exact, *exact, data, sched, grid, 50, 1) == 0.0);

  const Eigen::Vector2d c(0.3, -0.4);
  const CallableScore shifted(2, sched, [&](const Eigen::MatrixXd& x, double t) {
    return Eigen::MatrixXd(exact->score(x, t).colwise() + c);
  });
  CHECK(epsilon_score_estimate(*exact, shifted, data, sched, grid, 500, 2) == doctest::Approx(c.norm()).epsilon(1e-12));
  CHECK(epsilon_jacobian_estimate(*exact, shifted, data, sched, grid, 20, 2) <= 1e-5);

  // Scaling by (1 + delta): score error delta sqrt(tr P), Jacobian error delta |P|.
  const double delta = 0.1;
  const CallableScore scaled(2, sched, [&](const Eigen::MatrixXd& x, double t) {
    return Eigen::MatrixXd((1.0 + delta) * exact->score(x, t));
  });
  double sup_op = 0.0;
  for (double t : grid) {
    const MarginalLaw law = marginal_law(data, sched, t);
    sup_op = std::max(sup_op, operator_norm(law.cov.inverse()));
  }
  const double eps_jac = epsilon_jacobian_estimate(*exact, scaled, data, sched, grid, 20, 3);
  CHECK(eps_jac == doctest::Approx(delta * sup_op).epsilon(1e-4));
  const double eps_s = epsilon_score_estimate(*exact, scaled, data, sched, grid, 20000, 3);
  double sup_tr = 0.0;
  for (double t : grid) sup_tr = std::max(sup_tr, marginal_law(data, sched, t).cov.inverse().trace());
  CHECK(eps_s == doctest::Approx(delta * std::sqrt(sup_tr)).epsilon(0.03));

  CHECK(operator_norm(Eigen::Matrix2d(Eigen::Vector2d(3.0, -5.0).asDiagonal())) == doctest::Approx(5.0));
  CHECK_THROWS_AS(epsilon_score_estimate(*exact, *exact, data, sched, {1.5}, 10, 1), ConfigError);
  CHECK_THROWS_AS(epsilon_score_estimate(*exact, *exact, data, sched, {}, 10, 1), ConfigError);
}
