// opsplit: command-line front end for the sampler experiments.
//
// Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 I/O error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "opsplit/errors.hpp"
#include "opsplit/harness.hpp"

namespace {

using namespace opsplit;
using Clock = std::chrono::steady_clock;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> format;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "Experiment config (JSON)");
  cmd->add_option("--seed", opts.seed, "Master seed, overrides the config");
  cmd->add_option("--out", opts.out_dir, "Output directory, overrides the config");
  cmd->add_option("--format", opts.format, "Report format; both are written when omitted")
      ->check(CLI::IsMember({"csv", "json"}));
}

ExperimentConfig resolve_config(const CommonOptions& opts) {
  ExperimentConfig cfg = opts.config_path.empty() ? parse_config(nlohmann::json::object()) : load_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out_dir) cfg.output_dir = *opts.out_dir;
  cfg.validate();
  return cfg;
}

std::vector<ReportFormat> formats(const CommonOptions& opts) {
  if (opts.format) return {report_format_from_string(*opts.format)};
  return {ReportFormat::csv, ReportFormat::json};
}

const char* extension(ReportFormat f) { return f == ReportFormat::csv ? ".csv" : ".json"; }

class Timer {
 public:
  explicit Timer(RunManifest& m) : manifest_(m) {}
  template <typename Fn>
  auto phase(const std::string& name, Fn&& fn) {
    const auto start = Clock::now();
    struct Record {
      RunManifest& m;
      std::string name;
      Clock::time_point start;
      ~Record() { m.timings.emplace_back(name, std::chrono::duration<double>(Clock::now() - start).count()); }
    } record{manifest_, name, start};
    return fn();
  }

 private:
  RunManifest& manifest_;
};

template <typename Report>
void emit_all(const Report& report, const std::string& stem, const CommonOptions& opts, const ExperimentConfig& cfg,
              RunManifest& manifest) {
  for (ReportFormat f : formats(opts)) {
    const auto path = cfg.output_dir / (stem + extension(f));
    emit_report(report, f, path);
    manifest.outputs.push_back(path.string());
  }
}

void write_manifest(const RunManifest& manifest, const ExperimentConfig& cfg, const std::string& stem) {
  write_file(cfg.output_dir / (stem + "_manifest.json"),
             [&](std::ostream& out) { out << to_json(manifest).dump(2) << '\n'; });
}

int cmd_converge(const CommonOptions& opts, const std::string& score, const std::string& checkpoint) {
  ExperimentConfig cfg = resolve_config(opts);
  if (!score.empty()) cfg.score.source = score_source_from_string(score);
  if (!checkpoint.empty()) cfg.score.checkpoint = checkpoint;
  cfg.validate();

  RunManifest manifest;
  manifest.command = "converge";
  Timer timer(manifest);
  LossReport training;
  const auto field = timer.phase("score", [&] { return make_score_field(cfg, &training); });
  std::optional<GaussianDensity> zero_target;
  if (cfg.score.source == ScoreSource::zero) {
    // Linear flow alone maps N(0, I) at t = 1 to N(0, r^2 I) at t_min.
    const double r = integrating_factor(cfg.schedule, cfg.schedule.t_min, 1.0);
    const auto d = cfg.data.mu.size();
    zero_target.emplace(Eigen::VectorXd::Zero(d), (r * r) * Eigen::MatrixXd::Identity(d, d));
  }
  const ConvergenceReport report = timer.phase("converge", [&] {
    return run_convergence_experiment(cfg, *field, zero_target ? &*zero_target : nullptr);
  });
  manifest.config = report.config;
  manifest.seeds = report.seeds;
  const std::string stem = std::string("converge_") + to_string(cfg.score.source);
  emit_all(report, stem, opts, cfg, manifest);
  write_manifest(manifest, cfg, stem);

  std::printf("kde floor %.4g (+- %.2g)\n", report.kde_floor, report.kde_floor_std_error);
  for (const auto& p : report.points) {
    std::printf("T=%-4d h=%-10.4g tv=%.5f +- %.5f%s\n", p.steps, p.h, p.tv.value, p.tv.std_error,
                p.in_fit ? "" : "  (below floor cut)");
  }
  if (report.score_error) {
    std::printf("eps_score %.4g  eps_jac %.4g\n", report.score_error->eps_score, report.score_error->eps_jac);
  }
  if (report.fit) {
    std::printf("slope %.4f\n", report.fit->slope);
  } else {
    std::printf("slope n/a (fewer than 3 points above the floor cut)\n");
  }
  return 0;
}

int cmd_train_sweep(const CommonOptions& opts, const std::vector<std::string>& cells, bool save) {
  const ExperimentConfig cfg = resolve_config(opts);
  SweepOptions sweep;
  for (const std::string& c : cells) {
    int l = 0, w = 0;
    char sep = 0;
    if (std::sscanf(c.c_str(), "%d%c%d", &l, &sep, &w) != 3 || sep != 'x') {
      throw ConfigError("--cell expects LAYERSxWIDTH, got '" + c + "'");
    }
    sweep.only_cells.emplace_back(l, w);
  }
  if (save) sweep.checkpoint_dir = cfg.output_dir / "checkpoints";

  RunManifest manifest;
  manifest.command = "train-sweep";
  Timer timer(manifest);
  const TrainingSweepReport report = timer.phase("train-sweep", [&] { return run_training_sweep(cfg, sweep); });
  manifest.config = report.config;
  manifest.seeds = report.seeds;
  emit_all(report, "train_sweep", opts, cfg, manifest);
  const auto table = cfg.output_dir / "train_sweep_table.csv";
  write_file(table, [&](std::ostream& out) { write_table_csv(out, report); });
  manifest.outputs.push_back(table.string());
  write_manifest(manifest, cfg, "train_sweep");

  std::printf("optimal loss %.6f\n", report.optimal_loss);
  for (const auto& c : report.cells) {
    std::printf("layers=%d width=%-4d %s loss=%.5f\n", c.hidden_layers, c.width, c.status.c_str(), c.final_train_loss);
  }
  return 0;
}

int cmd_order_study(const CommonOptions& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  RunManifest manifest;
  manifest.command = "order-study";
  Timer timer(manifest);
  const OrderStudyReport report = timer.phase("order-study", [&] { return run_order_study(cfg); });
  manifest.config = report.config;
  manifest.seeds = report.seeds;
  emit_all(report, "order_study", opts, cfg, manifest);
  write_manifest(manifest, cfg, "order_study");
  for (const auto& s : report.series) {
    std::printf("%s+%s slope %s\n", s.scheme.c_str(), s.tableau.c_str(),
                s.fit ? std::to_string(s.fit->slope).c_str() : "n/a");
  }
  return 0;
}

int cmd_sample(const CommonOptions& opts, int steps, long n, bool trajectory) {
  const ExperimentConfig cfg = resolve_config(opts);
  if (steps < 1 || n < 1) throw ConfigError("sample: --steps and --n must be positive");
  SamplerRun run;
  run.steps = steps;
  run.scheme = cfg.sampler.scheme;
  run.tableau = cfg.sampler.tableau;
  run.record_trajectory = trajectory;
  RunManifest manifest;
  manifest.command = "sample";
  Timer timer(manifest);
  run.field = timer.phase("score", [&] { return make_score_field(cfg); });
  const std::uint64_t seed = derive_seed(cfg.seed, "sample");
  const SampleSet set = timer.phase("sample", [&] { return generate_samples(run, n, seed); });

  const auto path = cfg.output_dir / "samples.csv";
  write_samples_csv(path, set.points);
  manifest.outputs.push_back(path.string());
  if (trajectory) {
    std::vector<double> times;
    for (int k = 0; k <= steps; ++k) times.push_back(run.time(steps - k));
    const auto tpath = cfg.output_dir / "trajectory.csv";
    write_trajectory_csv(tpath, set.trajectory, times);
    manifest.outputs.push_back(tpath.string());
  }
  manifest.config = to_json(cfg);
  manifest.seeds = {{"master", cfg.seed}, {"sample", seed}};
  write_manifest(manifest, cfg, "sample");
  return 0;
}

int cmd_tv(const CommonOptions& opts, const std::string& samples_path) {
  const ExperimentConfig cfg = resolve_config(opts);
  const Eigen::MatrixXd samples = read_samples_csv(samples_path);
  const GaussianDensity target = target_density(cfg);
  if (samples.rows() != target.dim()) throw ConfigError("tv: sample dimension does not match the data");
  const std::uint64_t seed = derive_seed(cfg.seed, "tv");
  const TvEstimate tv = tv_monte_carlo(kde_fit(samples, cfg.metrics.bandwidth), target, cfg.metrics.n_mc, seed);

  nlohmann::ordered_json j;
  j["samples"] = samples_path;
  j["n_samples"] = samples.cols();
  j["bandwidth_rule"] = to_string(cfg.metrics.bandwidth);
  j["tv"] = tv.value;
  j["tv_raw"] = tv.raw_value;
  j["tv_stderr"] = tv.std_error;
  j["n_mc"] = tv.n_mc;
  j["seed"] = tv.seed;
  const auto path = cfg.output_dir / "tv.json";
  write_file(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
  std::printf("tv %.6f +- %.6f\n", tv.value, tv.std_error);
  return 0;
}

int cmd_oracle_loss(const CommonOptions& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const double loss = optimal_loss_oracle(cfg.data, cfg.schedule);
  std::printf("%.10f\n", loss);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Operator-splitting samplers for diffusion probability-flow ODEs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersionTag));

  CommonOptions opts;
  std::string score, checkpoint, samples_path;
  std::vector<std::string> cells;
  bool save_checkpoints = true;
  int steps = 128;
  long n_samples = 10000;
  bool trajectory = false;

  auto* converge = app.add_subcommand("converge", "TV against the target over the configured step counts");
  add_common(converge, opts);
  converge->add_option("--score", score, "exact | mlp | train | zero")
      ->check(CLI::IsMember({"exact", "mlp", "train", "zero"}));
  converge->add_option("--checkpoint", checkpoint, "Network checkpoint for --score mlp");

  auto* sweep = app.add_subcommand("train-sweep", "Train the layers x width grid and tabulate final losses");
  add_common(sweep, opts);
  sweep->add_option("--cell", cells, "Restrict to LAYERSxWIDTH cells (repeatable)");
  sweep->add_flag("!--no-checkpoints", save_checkpoints, "Skip writing per-cell checkpoints");

  auto* order = app.add_subcommand("order-study", "Trajectory error slopes against an RK4 reference");
  add_common(order, opts);

  auto* sample = app.add_subcommand("sample", "Generate samples with the configured sampler");
  add_common(sample, opts);
  sample->add_option("--steps", steps, "Number of steps T");
  sample->add_option("--n", n_samples, "Number of particles");
  sample->add_flag("--trajectory", trajectory, "Also write every intermediate state");

  auto* tv = app.add_subcommand("tv", "TV between a sample file and the analytic target");
  add_common(tv, opts);
  tv->add_option("--samples", samples_path, "CSV with header x1,...,xd")->required();

  auto* oracle = app.add_subcommand("oracle-loss", "Print the Bayes-optimal noise-prediction loss");
  add_common(oracle, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*converge) return cmd_converge(opts, score, checkpoint);
    if (*sweep) return cmd_train_sweep(opts, cells, save_checkpoints);
    if (*order) return cmd_order_study(opts);
    if (*sample) return cmd_sample(opts, steps, n_samples, trajectory);
    if (*tv) return cmd_tv(opts, samples_path);
    if (*oracle) return cmd_oracle_loss(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
