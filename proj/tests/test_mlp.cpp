#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>

#include "opsplit/errors.hpp"
#include "opsplit/mlp.hpp"
#include "opsplit/random.hpp"

using namespace opsplit;

namespace {

// Plain loops over the stored matrices; shares nothing with the library's forward pass.
Eigen::VectorXd brute_forward(const Mlp& net, const Eigen::VectorXd& x, double t) {
  std::vector<double> a(x.data(), x.data() + x.size());
  a.push_back(t);
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    const Eigen::MatrixXd& w = net.weight(k);
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double s = net.bias(k)(i);
      for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * a[j];
      const bool hidden = k + 1 < net.layer_count();
      z[i] = hidden ? 0.5 * s * std::erfc(-s / std::sqrt(2.0)) : s;
    }
    a = std::move(z);
  }
  return Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.n_train = 2000;
  cfg.n_iters = 200;
  cfg.batch_size = 64;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("zero network outputs zero") {
  const Mlp net(Mlp::layer_sizes_for(2, 3, 16));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 10; ++i) {
    const Eigen::Vector2d x(n(rng), n(rng));
    CHECK(net.forward(x, 0.1 * i).isZero(0.0));
  }
}

TEST_CASE("hand-built identity network") {
  // gelu(c z) - gelu(-c z) = c z, so two mirrored units per coordinate give x back.
  const int d = 2;
  const double c = 0.5;
  Mlp net({d + 1, 2 * d, d});
  for (int i = 0; i < d; ++i) {
    net.weight(0)(i, i) = c;
    net.weight(0)(d + i, i) = -c;
    net.weight(1)(i, i) = 1.0 / c;
    net.weight(1)(i, d + i) = -1.0 / c;
  }
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Eigen::Vector2d x(u(rng), u(rng));
    if (x.norm() > 1.0) x.normalize();
    CHECK((net.forward(x, u(rng) * 0.5 + 0.5).col(0) - x).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("forward matches a brute-force reimplementation") {
  const Mlp net = Mlp::lecun_normal(Mlp::layer_sizes_for(2, 2, 7), 99);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd xs(2, 10);
  Eigen::VectorXd ts(10);
  for (int i = 0; i < 10; ++i) {
    xs.col(i) = Eigen::Vector2d(n(rng), n(rng));
    ts(i) = u(rng);
  }
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd lib = net.forward(xs.col(i), ts(i)).col(0);
    CHECK((lib - brute_forward(net, xs.col(i), ts(i))).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Batched evaluation at one t matches column-by-column.
  const Eigen::MatrixXd batched = net.forward(xs, 0.3);
  for (int i = 0; i < 10; ++i) {
    CHECK((batched.col(i) - brute_forward(net, xs.col(i), 0.3)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(net.forward(Eigen::MatrixXd::Zero(3, 1), 0.0), ConfigError);
}

TEST_CASE("gelu derivative matches finite differences") {
  for (double z = -4.0; z <= 4.0; z += 0.37) {
    const double fd = (gelu(z + 1e-6) - gelu(z - 1e-6)) / 2e-6;
    CHECK(gelu_derivative(z) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("parameter gradients match central differences") {
  Mlp net = Mlp::lecun_normal({3, 4, 2}, 5);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    for (Eigen::Index i = 0; i < net.bias(k).size(); ++i) net.bias(k)(i) = 0.3 * n(rng);
  }
  Eigen::MatrixXd inputs(3, 16), targets(2, 16);
  for (Eigen::Index j = 0; j < 16; ++j) {
    inputs.col(j) = Eigen::Vector3d(n(rng), n(rng), 0.5 + 0.3 * n(rng));
    targets.col(j) = Eigen::Vector2d(n(rng), n(rng));
  }
  MlpGradient grad;
  loss_and_gradient(net, inputs, targets, grad);

  std::uniform_int_distribution<int> layer(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto k = static_cast<std::size_t>(layer(rng));
    const bool use_bias = trial % 2 == 1;
    double* p;
    double analytic;
    if (use_bias) {
      std::uniform_int_distribution<Eigen::Index> pick(0, net.bias(k).size() - 1);
      const Eigen::Index i = pick(rng);
      p = &net.bias(k)(i);
      analytic = grad.biases[k](i);
    } else {
      std::uniform_int_distribution<Eigen::Index> pr(0, net.weight(k).rows() - 1), pc(0, net.weight(k).cols() - 1);
      const Eigen::Index i = pr(rng), j = pc(rng);
      p = &net.weight(k)(i, j);
      analytic = grad.weights[k](i, j);
    }
    const double saved = *p;
    const double h = 1e-5;
    *p = saved + h;
    const double lp = mean_squared_error(net, inputs, targets);
    *p = saved - h;
    const double lm = mean_squared_error(net, inputs, targets);
    *p = saved;
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(analytic - fd) <= 1e-4 * std::max(std::abs(fd), 1e-8));
  }
}

TEST_CASE("learning rate decays exponentially between the endpoints") {
  TrainConfig cfg;
  CHECK(cfg.learning_rate(0) == doctest::Approx(1e-5).epsilon(1e-14));
  CHECK(cfg.learning_rate(cfg.n_iters) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(cfg.learning_rate(cfg.n_iters / 2) == doctest::Approx(std::sqrt(1e-11)).epsilon(1e-12));
  TrainConfig bad;
  bad.lr_end = 2e-5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero iterations return the initialization") {
  TrainConfig cfg = small_config(17);
  cfg.n_iters = 0;
  const Architecture arch{1, 8};
  const TrainResult r = train_noise_predictor(cfg, arch, GaussianData::testbed_2d(), LinearBetaSchedule{});
  CHECK(r.net == Mlp::lecun_normal(Mlp::layer_sizes_for(2, 1, 8), derive_seed(17, "train/init")));
  CHECK(r.report.final_train_loss == r.report.initial_loss);
  CHECK(r.report.curve.empty());
}

TEST_CASE("training is bitwise reproducible") {
  const TrainConfig cfg = small_config(23);
  const Architecture arch{2, 12};
  const TrainResult a = train_noise_predictor(cfg, arch, GaussianData::testbed_2d(), LinearBetaSchedule{});
  const TrainResult b = train_noise_predictor(cfg, arch, GaussianData::testbed_2d(), LinearBetaSchedule{});
  CHECK(a.net == b.net);
  CHECK(a.report.curve == b.report.curve);
  CHECK(a.report.final_train_loss >= 0.0);
  TrainConfig other = cfg;
  other.seed = 24;
  CHECK_FALSE(train_noise_predictor(other, arch, GaussianData::testbed_2d(), LinearBetaSchedule{}).net == a.net);
}

TEST_CASE("training loss trends downward") {
  TrainConfig cfg;
  // Still well above the plateau here, so the trend dominates minibatch noise.
  cfg.n_iters = 3000;
  cfg.batch_size = 512;
  cfg.lr_start = 1e-4;
  cfg.lr_end = 1e-5;
  cfg.seed = 31;
  const TrainResult r = train_noise_predictor(cfg, Architecture{1, 32}, GaussianData::testbed_2d(), LinearBetaSchedule{});
  const auto& c = r.report.curve;
  const std::size_t window = 100;
  std::vector<double> means;
  for (std::size_t s = 0; s + window <= c.size(); s += window) {
    means.push_back(std::accumulate(c.begin() + s, c.begin() + s + window, 0.0) / window);
  }
  int violations = 0;
  for (std::size_t i = 1; i < means.size(); ++i) violations += means[i] > means[i - 1];
  MESSAGE("moving-average increases: " << violations << " of " << means.size() - 1);
  CHECK(violations <= 0.05 * (means.size() - 1));
  CHECK(r.report.final_train_loss < r.report.initial_loss);
  CHECK(r.report.final_train_loss >= r.report.optimal_loss - 0.005);
}

TEST_CASE("divergence guard") {
  TrainConfig cfg = small_config(5);
  cfg.lr_start = 50.0;
  cfg.lr_end = 10.0;
  CHECK_THROWS_AS(train_noise_predictor(cfg, Architecture{2, 64}, GaussianData::testbed_2d(), LinearBetaSchedule{}),
                  NumericError);
}

TEST_CASE("optimal loss oracle") {
  const LinearBetaSchedule sched;
  const double l_star = optimal_loss_oracle(GaussianData::testbed_2d(), sched);
  CHECK(std::abs(l_star - 0.2705) <= 0.001);

  const GaussianData iso{Eigen::Vector2d(1.0, -1.0), Eigen::Matrix2d::Identity()};
  const double quad = simpson([&](double t) { return std::exp(-sched.integrated_beta(t)); }, 0.0, 1.0, 20000);
  CHECK(std::abs(optimal_loss_oracle(iso, sched) - quad) < 1e-6);

  CHECK(optimal_loss_integrand(GaussianData::testbed_2d(), sched, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "opsplit_test_mlp";
  std::filesystem::create_directories(dir);
  const Mlp net = Mlp::lecun_normal(Mlp::layer_sizes_for(2, 2, 5), 8);
  TrainConfig cfg = small_config(77);
  save_checkpoint(dir / "net.json", net, &cfg);
  const Checkpoint ck = load_checkpoint(dir / "net.json");
  CHECK(ck.net == net);
  REQUIRE(ck.train_config.has_value());
  CHECK(ck.train_config->seed == 77);
  CHECK(ck.train_config->n_iters == cfg.n_iters);

  {
    std::ofstream bad(dir / "bad.json");
    bad << R"({"format": "something-else", "version": 1})";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("single and double precision training agree") {
  TrainConfig cfg = small_config(41);
  cfg.n_iters = 500;
  const Architecture arch{2, 16};
  cfg.precision = TrainPrecision::float64;
  const TrainResult d = train_noise_predictor(cfg, arch, GaussianData::testbed_2d(), LinearBetaSchedule{});
  cfg.precision = TrainPrecision::float32;
  const TrainResult f = train_noise_predictor(cfg, arch, GaussianData::testbed_2d(), LinearBetaSchedule{});
  CHECK(std::abs(d.report.final_train_loss - f.report.final_train_loss) < 1e-4);
  CHECK(d.report.curve.size() == f.report.curve.size());
}

TEST_CASE("fan-in uniform initialisation stays inside its bounds") {
  const Mlp net = Mlp::fan_in_uniform({3, 50, 2}, 4);
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.weight(k).cols()));
    CHECK(net.weight(k).cwiseAbs().maxCoeff() <= bound);
    CHECK(net.bias(k).cwiseAbs().maxCoeff() <= bound);
    CHECK(net.bias(k).cwiseAbs().maxCoeff() > 0.0);
  }
  CHECK(weight_init_from_string(to_string(WeightInit::fan_in_uniform)) == WeightInit::fan_in_uniform);
  CHECK_THROWS_AS(weight_init_from_string("xavier"), ConfigError);
}
