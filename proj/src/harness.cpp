#include "opsplit/harness.hpp"

#include <cmath>
#include <exception>

#include "opsplit/errors.hpp"
#include "opsplit/random.hpp"

namespace opsplit {

namespace {

std::vector<double> score_error_grid(const ExperimentConfig& cfg) {
  return uniform_time_grid(cfg.metrics.eps_grid_points, cfg.metrics.eps_grid_start, 1.0);
}

// Rethrows the active exception with a context prefix, keeping its category.
[[noreturn]] void rethrow_with(const std::string& context) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(context + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError(context + ": " + e.what());
  }
}

std::string cell_label(int layers, int width) {
  return "layers=" + std::to_string(layers) + ",width=" + std::to_string(width);
}

}  // namespace

std::shared_ptr<const ScoreField> make_score_field(const ExperimentConfig& cfg, LossReport* training) {
  switch (cfg.score.source) {
    case ScoreSource::exact:
      return std::make_shared<ExactGaussianScore>(cfg.data, cfg.schedule);
    case ScoreSource::zero:
      return make_zero_score(cfg.data.mu.size(), cfg.schedule);
    case ScoreSource::mlp: {
      Checkpoint ck = load_checkpoint(cfg.score.checkpoint);
      if (ck.net.input_dim() != cfg.data.mu.size() + 1) {
        throw ConfigError("checkpoint " + cfg.score.checkpoint.string() + " does not match the data dimension");
      }
      return std::make_shared<NoisePredictorScore>(std::make_shared<const Mlp>(std::move(ck.net)), cfg.schedule);
    }
    case ScoreSource::train: {
      TrainResult result = train_noise_predictor(cfg.resolved_train_config(), cfg.score.arch, cfg.data, cfg.schedule);
      if (training) *training = result.report;
      return std::make_shared<NoisePredictorScore>(std::make_shared<const Mlp>(std::move(result.net)), cfg.schedule);
    }
  }
  throw ConfigError("unknown score source");
}

GaussianDensity target_density(const ExperimentConfig& cfg) {
  return GaussianDensity(marginal_law(cfg.data, cfg.schedule, cfg.schedule.t_min));
}

TvEstimate measure_kde_floor(const ExperimentConfig& cfg, const Density& target) {
  Rng rng(derive_seed(cfg.seed, "converge/floor/samples"));
  const KdeModel kde = kde_fit(target.sample(rng, cfg.metrics.n_samples), cfg.metrics.bandwidth);
  return tv_monte_carlo(kde, target, cfg.metrics.n_mc, derive_seed(cfg.seed, "converge/floor/tv"));
}

std::map<std::string, std::uint64_t> convergence_seeds(const ExperimentConfig& cfg) {
  std::map<std::string, std::uint64_t> seeds{
      {"master", cfg.seed},
      {"converge/samples", derive_seed(cfg.seed, "converge/samples")},
      {"converge/floor/samples", derive_seed(cfg.seed, "converge/floor/samples")},
      {"converge/floor/tv", derive_seed(cfg.seed, "converge/floor/tv")},
  };
  for (int T : cfg.steps) {
    seeds["converge/tv/T=" + std::to_string(T)] = derive_seed(cfg.seed, "converge/tv", static_cast<std::uint64_t>(T));
  }
  if (cfg.score.source == ScoreSource::train) seeds["train"] = cfg.resolved_train_config().seed;
  if (cfg.score.source == ScoreSource::train || cfg.score.source == ScoreSource::mlp) {
    seeds["score-error"] = derive_seed(cfg.seed, "score-error");
  }
  return seeds;
}

ConvergenceReport run_convergence_experiment(const ExperimentConfig& cfg, const ScoreField& field,
                                             const Density* target) {
  cfg.validate();
  std::optional<GaussianDensity> own_target;
  if (!target) target = &own_target.emplace(target_density(cfg));
  if (target->dim() != field.dim()) throw ConfigError("converge: target and score dimensions differ");

  ConvergenceReport report;
  report.score_kind = to_string(field.kind());
  report.scheme = cfg.sampler.scheme.name;
  report.tableau = cfg.sampler.tableau.name;
  report.bandwidth_rule = to_string(cfg.metrics.bandwidth);
  report.floor_factor = cfg.metrics.floor_factor;
  report.config = to_json(cfg);
  report.seeds = convergence_seeds(cfg);

  try {
    const TvEstimate floor = measure_kde_floor(cfg, *target);
    report.kde_floor = floor.value;
    report.kde_floor_std_error = floor.std_error;
  } catch (...) {
    rethrow_with("converge: kde floor");
  }

  // Non-owning alias; the run does not outlive this call.
  const std::shared_ptr<const ScoreField> alias(std::shared_ptr<const ScoreField>(), &field);
  const std::uint64_t sample_seed = derive_seed(cfg.seed, "converge/samples");
  std::vector<std::pair<double, double>> fit_points;
  for (int T : cfg.steps) {
    ConvergencePoint point;
    point.steps = T;
    SamplerRun run;
    run.steps = T;
    run.scheme = cfg.sampler.scheme;
    run.tableau = cfg.sampler.tableau;
    run.field = alias;
    point.h = run.step_size();
    const std::string where = "converge: T=" + std::to_string(T);
    Eigen::MatrixXd samples;
    try {
      samples = generate_samples(run, cfg.metrics.n_samples, sample_seed).points;
    } catch (...) {
      rethrow_with(where + ", sampling");
    }
    try {
      const KdeModel kde = kde_fit(samples, cfg.metrics.bandwidth);
      point.tv = tv_monte_carlo(kde, *target, cfg.metrics.n_mc,
                                derive_seed(cfg.seed, "converge/tv", static_cast<std::uint64_t>(T)));
    } catch (...) {
      rethrow_with(where + ", tv");
    }
    point.in_fit = point.tv.value >= cfg.metrics.floor_factor * report.kde_floor && point.tv.value > 0.0;
    if (point.in_fit) fit_points.emplace_back(point.h, point.tv.value);
    report.points.push_back(point);
  }
  if (fit_points.size() >= 3) report.fit = fit_loglog_slope(fit_points);

  if (field.kind() == ScoreKind::learned_mlp) {
    try {
      const ExactGaussianScore exact(cfg.data, cfg.schedule);
      report.score_error = score_error_report(field, exact, cfg.data, cfg.schedule, score_error_grid(cfg),
                                              cfg.metrics.eps_n_mc, derive_seed(cfg.seed, "score-error"));
    } catch (...) {
      rethrow_with("converge: score error");
    }
  }
  return report;
}

TrainingSweepReport run_training_sweep(const ExperimentConfig& cfg, const SweepOptions& options) {
  cfg.validate();
  TrainingSweepReport report;
  report.optimal_loss = optimal_loss_oracle(cfg.data, cfg.schedule);
  report.activation = kActivationId;
  report.hidden_layers = cfg.sweep.hidden_layers;
  report.widths = cfg.sweep.widths;
  report.config = to_json(cfg);
  const TrainConfig base = cfg.resolved_train_config();
  report.seeds["master"] = cfg.seed;
  report.seeds["train"] = base.seed;
  report.seeds["score-error"] = derive_seed(cfg.seed, "score-error");
  const ExactGaussianScore exact(cfg.data, cfg.schedule);
  const std::vector<double> grid = score_error_grid(cfg);

  const auto selected = [&](int l, int w) {
    if (options.only_cells.empty()) return true;
    for (const auto& [ol, ow] : options.only_cells) {
      if (ol == l && ow == w) return true;
    }
    return false;
  };

  for (int layers : cfg.sweep.hidden_layers) {
    for (int width : cfg.sweep.widths) {
      if (!selected(layers, width)) continue;
      SweepCell cell;
      cell.hidden_layers = layers;
      cell.width = width;
      TrainConfig tc = base;
      tc.seed = derive_seed(base.seed, "train-sweep/cell", static_cast<std::uint64_t>(layers) * 100000u + width);
      report.seeds["train-sweep/" + cell_label(layers, width)] = tc.seed;
      try {
        const TrainResult result = train_noise_predictor(tc, Architecture{layers, width}, cfg.data, cfg.schedule);
        cell.initial_loss = result.report.initial_loss;
        cell.final_train_loss = result.report.final_train_loss;
        cell.final_fresh_loss = result.report.final_fresh_loss;
        const NoisePredictorScore learned(std::make_shared<const Mlp>(result.net), cfg.schedule);
        cell.eps_score = epsilon_score_estimate(learned, exact, cfg.data, cfg.schedule, grid, cfg.metrics.eps_n_mc,
                                                derive_seed(cfg.seed, "score-error"));
        if (!options.checkpoint_dir.empty()) {
          const auto path = options.checkpoint_dir /
                            ("mlp_l" + std::to_string(layers) + "_w" + std::to_string(width) + ".json");
          save_checkpoint(path, result.net, &tc);
          cell.checkpoint = path.filename().string();
        }
      } catch (const NumericError& e) {
        cell.status = "diverged";
        cell.message = e.what();
        cell.initial_loss = cell.final_train_loss = cell.final_fresh_loss = cell.eps_score = std::nan("");
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

OrderStudyReport run_order_study(const ExperimentConfig& cfg) {
  cfg.validate();
  OrderStudyReport report;
  report.ref_factor = cfg.order.ref_factor;
  report.n_probe = cfg.order.n_probe;
  report.config = to_json(cfg);
  const std::uint64_t probe_seed = derive_seed(cfg.seed, "order/probes");
  report.seeds["master"] = cfg.seed;
  report.seeds["order/probes"] = probe_seed;

  const std::shared_ptr<const ScoreField> field = std::make_shared<ExactGaussianScore>(cfg.data, cfg.schedule);
  for (const SamplerSpec& spec : cfg.order.samplers) {
    OrderSeries series;
    series.scheme = spec.scheme.name;
    series.tableau = spec.tableau.name;
    std::vector<std::pair<double, double>> fit_points;
    for (int T : cfg.order.steps) {
      SamplerRun run;
      run.steps = T;
      run.scheme = spec.scheme;
      run.tableau = spec.tableau;
      run.field = field;
      OrderPoint point;
      point.steps = T;
      point.h = run.step_size();
      try {
        const TrajectoryError err = trajectory_global_error(run, cfg.order.ref_factor * T, cfg.order.n_probe, probe_seed);
        point.error = err.max_error;
        point.reference_shift = err.reference_shift;
      } catch (...) {
        rethrow_with("order-study: " + spec.scheme.name + "+" + spec.tableau.name + ", T=" + std::to_string(T));
      }
      if (point.error > 0.0) fit_points.emplace_back(point.h, point.error);
      series.points.push_back(point);
    }
    if (fit_points.size() >= 3) series.fit = fit_loglog_slope(fit_points);
    report.series.push_back(std::move(series));
  }
  return report;
}

}  // namespace opsplit
