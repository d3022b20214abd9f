// Acceptance run: one PASS/FAIL line per criterion, details indented above it.
//
//   acceptance [--only 1,3] [--out DIR]
//
// Exit status: 0 when every selected criterion reached a verdict, 2 when one
// raised an error. With --strict a FAIL verdict also gives 1.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "opsplit/harness.hpp"

namespace {

using namespace opsplit;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

__attribute__((format(printf, 1, 2))) void note(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  std::printf("    ");
  std::vprintf(fmt, args);
  std::printf("\n");
  va_end(args);
  std::fflush(stdout);
}

bool verdict(int id, const char* name, bool ok) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, name);
  std::fflush(stdout);
  return ok;
}

struct Context {
  fs::path out;
  std::optional<ConvergenceReport> exact_run;
  fs::path learned_checkpoint;
};

ExperimentConfig base_config(const fs::path& out) {
  ExperimentConfig cfg = parse_config(nlohmann::json::object());
  cfg.output_dir = out;
  return cfg;
}

std::string render(const ConvergenceReport& r) {
  std::ostringstream s;
  write_csv(s, r);
  s << to_json(r).dump(2);
  return s.str();
}

void print_convergence(const ConvergenceReport& r) {
  note("kde floor %.5f +- %.5f", r.kde_floor, r.kde_floor_std_error);
  for (const auto& p : r.points) {
    note("T=%-4d tv=%.5f +- %.5f  ratio to floor %.2f%s", p.steps, p.tv.value, p.tv.std_error,
           p.tv.value / r.kde_floor, p.in_fit ? "" : "  (excluded)");
  }
}

// Strang + exact score on the reference Gaussian.
bool criterion_1(Context& ctx) {
  const ExperimentConfig cfg = base_config(ctx.out / "c1");
  const auto start = Clock::now();
  const auto field = make_score_field(cfg);
  ctx.exact_run = run_convergence_experiment(cfg, *field);
  const ConvergenceReport& r = *ctx.exact_run;
  emit_report(r, ReportFormat::csv, cfg.output_dir / "converge_exact.csv");
  print_convergence(r);
  int in_fit = 0;
  for (const auto& p : r.points) in_fit += p.in_fit ? 1 : 0;
  note("points above %.0fx floor: %d of %zu; runtime %.1f s", r.floor_factor, in_fit, r.points.size(),
         seconds_since(start));
  bool ok = r.fit.has_value();
  if (r.fit) {
    note("slope %.4f (need [1.7, 2.3])", r.fit->slope);
    ok = r.fit->slope >= 1.7 && r.fit->slope <= 2.3;
  } else {
    note("fewer than 3 points clear the floor cut; no slope can be fitted");
  }
  return verdict(1, "exact-score TV slope", ok);
}

bool criterion_2(Context& ctx) {
  const ExperimentConfig cfg = base_config(ctx.out / "c2");
  const auto start = Clock::now();
  const OrderStudyReport r = run_order_study(cfg);
  const double elapsed = seconds_since(start);
  emit_report(r, ReportFormat::csv, cfg.output_dir / "order_study.csv");
  bool ok = r.series.size() == 2;
  const double target[2] = {2.0, 1.0};
  for (std::size_t i = 0; i < r.series.size() && i < 2; ++i) {
    const auto& s = r.series[i];
    for (const auto& p : s.points) note("%s+%s T=%-4d error %.4e", s.scheme.c_str(), s.tableau.c_str(), p.steps, p.error);
    const bool good = s.fit && std::abs(s.fit->slope - target[i]) <= 0.2;
    note("%s+%s slope %.4f (need %.1f +- 0.2)", s.scheme.c_str(), s.tableau.c_str(), s.fit ? s.fit->slope : NAN,
           target[i]);
    ok = ok && good;
  }
  note("runtime %.1f s (need < 60)", elapsed);
  return verdict(2, "trajectory order study", ok && elapsed < 60.0);
}

bool criterion_3(Context&) {
  const LinearBetaSchedule sched;
  const double l_star = optimal_loss_oracle(GaussianData::testbed_2d(), sched);
  note("L* = %.6f (need 0.2705 +- 0.001)", l_star);

  // Identity covariance: L* reduces to the integral of alpha^2, here by composite Simpson.
  const GaussianData iso{Eigen::Vector2d(1.0, -1.0), Eigen::Matrix2d::Identity()};
  const double reduced = optimal_loss_oracle(iso, sched);
  const int n = 20000;
  double simpson = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    simpson += w * std::exp(-(sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t));
  }
  simpson /= 3.0 * n;
  note("identity case %.12f vs independent quadrature %.12f", reduced, simpson);
  return verdict(3, "optimal loss oracle", std::abs(l_star - 0.2705) <= 0.001 && std::abs(reduced - simpson) <= 1e-6);
}

bool criterion_4(Context& ctx) {
  const std::uint64_t seeds[3] = {1, 2, 3};
  int passing = 0;
  bool runtime_ok = true;
  for (int s = 0; s < 3 && passing < 2; ++s) {
    ExperimentConfig cfg = base_config(ctx.out / "c4" / ("seed" + std::to_string(seeds[s])));
    cfg.seed = seeds[s];
    const double l_star = optimal_loss_oracle(cfg.data, cfg.schedule);
    bool floor_ok = true;
    std::optional<double> loss_2x200;
    TrainingSweepReport all;
    for (int layers : cfg.sweep.hidden_layers) {
      for (int width : cfg.sweep.widths) {
        SweepOptions opts;
        opts.only_cells = {{layers, width}};
        opts.checkpoint_dir = cfg.output_dir;
        const auto start = Clock::now();
        const TrainingSweepReport r = run_training_sweep(cfg, opts);
        const double elapsed = seconds_since(start);
        const SweepCell& c = r.cells.at(0);
        all.cells.push_back(c);
        const bool cell_ok = c.status == "ok" && c.final_train_loss >= l_star - 0.005;
        floor_ok = floor_ok && cell_ok;
        runtime_ok = runtime_ok && elapsed < 300.0;
        if (layers == 2 && width == 200 && c.status == "ok") {
          loss_2x200 = c.final_train_loss;
          if (ctx.learned_checkpoint.empty()) ctx.learned_checkpoint = cfg.output_dir / c.checkpoint;
        }
        note("seed %llu cell %dx%-3d %s loss %.5f (fresh %.5f) %.1f s", static_cast<unsigned long long>(seeds[s]),
               layers, width, c.status.c_str(), c.final_train_loss, c.final_fresh_loss, elapsed);
      }
    }
    all.optimal_loss = l_star;
    all.hidden_layers = cfg.sweep.hidden_layers;
    all.widths = cfg.sweep.widths;
    emit_report(all, ReportFormat::csv, cfg.output_dir / "train_sweep.csv");
    const bool band = loss_2x200 && *loss_2x200 >= 0.27 && *loss_2x200 <= 0.31;
    const bool ok = band && floor_ok;
    note("seed %llu: 2x200 in [0.27, 0.31] %s, all cells >= L* - 0.005 %s -> %s",
           static_cast<unsigned long long>(seeds[s]), band ? "yes" : "no", floor_ok ? "yes" : "no",
           ok ? "pass" : "fail");
    passing += ok ? 1 : 0;
  }
  note("%d seed(s) passed (need 2); every cell under 300 s: %s", passing, runtime_ok ? "yes" : "no");
  return verdict(4, "training replication", passing >= 2 && runtime_ok);
}

bool criterion_5(Context& ctx) {
  ExperimentConfig cfg = base_config(ctx.out / "c5");
  if (ctx.learned_checkpoint.empty()) {
    // Standalone run: train the 2x200 network with the default protocol.
    SweepOptions opts;
    opts.only_cells = {{2, 200}};
    opts.checkpoint_dir = cfg.output_dir;
    ExperimentConfig train_cfg = cfg;
    train_cfg.seed = 1;
    const TrainingSweepReport r = run_training_sweep(train_cfg, opts);
    if (r.cells.at(0).status != "ok") return verdict(5, "learned-score behaviour", false);
    ctx.learned_checkpoint = cfg.output_dir / r.cells.at(0).checkpoint;
  }
  if (!ctx.exact_run) {
    const auto exact = make_score_field(base_config(ctx.out / "c1"));
    ctx.exact_run = run_convergence_experiment(base_config(ctx.out / "c1"), *exact);
  }
  cfg.score.source = ScoreSource::mlp;
  cfg.score.checkpoint = ctx.learned_checkpoint;
  const auto learned = make_score_field(cfg);
  const ConvergenceReport r = run_convergence_experiment(cfg, *learned);
  emit_report(r, ReportFormat::csv, cfg.output_dir / "converge_mlp.csv");
  note("checkpoint %s", ctx.learned_checkpoint.filename().string().c_str());

  bool above = true;
  std::vector<std::pair<double, double>> largest;
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const auto& l = r.points[i];
    const auto& e = ctx.exact_run->points.at(i);
    const double band = 3.0 * std::hypot(l.tv.std_error, e.tv.std_error);
    const bool ok = l.tv.value + band >= e.tv.value;
    above = above && ok;
    note("T=%-4d learned %.5f exact %.5f (3 SE band %.5f)%s", l.steps, l.tv.value, e.tv.value, band,
           ok ? "" : "  below");
  }
  std::vector<ConvergencePoint> sorted = r.points;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.h > b.h; });
  for (std::size_t i = 0; i < 3 && i < sorted.size(); ++i) largest.emplace_back(sorted[i].h, sorted[i].tv.value);
  const LogLogFit fit = fit_loglog_slope(largest);
  note("slope over the three largest h: %.4f (need >= 1.5)", fit.slope);
  return verdict(5, "learned-score behaviour", above && fit.slope >= 1.5);
}

bool criterion_6(Context& ctx) {
  const LinearBetaSchedule sched;
  const GaussianData data = GaussianData::testbed_2d();
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  bool all = true;
  const auto check = [&](const char* what, bool ok, double value) {
    note("%-44s %s (%.3e)", what, ok ? "ok" : "FAILED", value);
    all = all && ok;
  };

  double vp = 0.0, cocycle = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const ScheduleEval e = eval_schedule(sched, unif(gen));
    vp = std::max(vp, std::abs(e.alpha * e.alpha + e.sigma * e.sigma - 1.0));
    double t[3] = {unif(gen), unif(gen), unif(gen)};
    std::sort(t, t + 3);
    cocycle = std::max(cocycle, std::abs(integrating_factor(sched, t[2], t[1]) * integrating_factor(sched, t[1], t[0]) -
                                         integrating_factor(sched, t[2], t[0])));
  }
  check("VP identity", vp < 1e-12, vp);
  check("integrating-factor cocycle", cocycle < 1e-12, cocycle);

  const ExactGaussianScore exact(data, sched);
  double fd_rel = 0.0;
  std::normal_distribution<double> normal(0.0, 1.5);
  for (int i = 0; i < 200; ++i) {
    const double t = unif(gen);
    const GaussianDensity q(marginal_law(data, sched, t));
    const Eigen::Vector2d x(normal(gen), normal(gen));
    Eigen::Vector2d fd;
    for (int k = 0; k < 2; ++k) {
      const double step = 1e-5;
      Eigen::Matrix2d pm;
      pm.col(0) = x;
      pm.col(1) = x;
      pm(k, 0) += step;
      pm(k, 1) -= step;
      const Eigen::VectorXd lp = q.log_pdf(pm);
      fd(k) = (lp(0) - lp(1)) / (2.0 * step);
    }
    const Eigen::Vector2d s = exact.score(x, t);
    fd_rel = std::max(fd_rel, (s - fd).norm() / std::max(s.norm(), 1e-3));
  }
  check("score vs finite-difference gradient", fd_rel < 1e-6, fd_rel);

  const auto grid = uniform_time_grid();
  const double eps_s = epsilon_score_estimate(exact, exact, data, sched, grid, 2000, 1);
  const double eps_j = epsilon_jacobian_estimate(exact, exact, data, sched, grid, 200, 1);
  check("eps_score(exact, exact) = 0", eps_s == 0.0, eps_s);
  check("eps_jac(exact, exact) = 0", eps_j == 0.0, eps_j);

  double closed = 0.0;
  bool bitwise = true;
  for (int i = 0; i < 1000; ++i) {
    const int T = 1 + static_cast<int>(unif(gen) * 256);
    const int n = 1 + static_cast<int>(unif(gen) * T);
    const double t_n = static_cast<double>(std::min(n, T)) / T, h = 1.0 / T;
    const Eigen::MatrixXd x = Eigen::Vector2d(normal(gen), normal(gen));
    const Eigen::MatrixXd a = strang_step(exact, x, t_n, h);
    closed = std::max(closed, (a - strang_step_closed_form(exact, x, t_n, h)).cwiseAbs().maxCoeff() /
                                  std::max(1.0, a.cwiseAbs().maxCoeff()));
    bitwise = bitwise &&
              composition_step(SplittingScheme::strang(), RkTableau::midpoint(), exact, x, t_n, h) == a &&
              composition_step(SplittingScheme::lie(), RkTableau::euler(), exact, x, t_n, h) == lie_step(exact, x, t_n, h);
  }
  check("five-line vs closed-form Strang step", closed <= 1e-12, closed);
  check("composition presets bitwise equal", bitwise, bitwise ? 0.0 : 1.0);

  const GaussianDensity p0(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
  const GaussianDensity p1(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Identity(1, 1));
  const double tv = tv_monte_carlo(p0, p1, 100000, 5).value;
  check("TV N(0,1) vs N(1,1) within 0.3829 +- 0.01", std::abs(tv - 0.3829) <= 0.01, tv);

  double planted = 0.0;
  for (double slope : {0.5, 1.0, 2.0, 4.0}) {
    std::vector<std::pair<double, double>> pts;
    for (int T : {8, 16, 32, 64, 128}) pts.emplace_back(1.0 / T, 3.0 * std::pow(1.0 / T, slope));
    planted = std::max(planted, std::abs(fit_loglog_slope(pts).slope - slope));
  }
  check("planted slopes recovered", planted <= 1e-12, planted);

  // Full convergence run repeated with the same seed.
  const ExperimentConfig cfg = base_config(ctx.out / "c6");
  const auto field = make_score_field(cfg);
  // Not reused from criterion 1: the echoed config carries the output directory.
  const ConvergenceReport first = run_convergence_experiment(cfg, *field);
  const ConvergenceReport again = run_convergence_experiment(cfg, *field);
  const bool same = render(again) == render(first);
  check("full-run byte determinism", same, same ? 0.0 : 1.0);
  return verdict(6, "property suite", all);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the operator-splitting samplers"};
  std::vector<int> only;
  std::string out = "acceptance_out";
  app.add_option("--only", only, "Run a subset of criteria (1-6)")->delimiter(',')->check(CLI::Range(1, 6));
  app.add_option("--out", out, "Directory for reports and checkpoints");
  bool strict = false;
  app.add_flag("--strict", strict, "Exit non-zero on any FAIL verdict");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6} : std::set<int>(only.begin(), only.end());
  Context ctx;
  ctx.out = out;
  bool (*const criteria[6])(Context&) = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6};
  bool ok = true;
  bool errored = false;
  for (int id : selected) {
    const auto start = Clock::now();
    try {
      ok = criteria[id - 1](ctx) && ok;
    } catch (const std::exception& e) {
      note("error: %s", e.what());
      errored = true;
      ok = verdict(id, "raised an error", false) && ok;
    }
    note("criterion %d took %.1f s", id, seconds_since(start));
  }
  if (errored) return 2;
  return strict && !ok ? 1 : 0;
}
