#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "opsplit/config.hpp"
#include "opsplit/report.hpp"

namespace opsplit {

/// Builds the score field named by cfg.score. For ScoreSource::train the
/// network is trained in place and its loss report stored in *training.
std::shared_ptr<const ScoreField> make_score_field(const ExperimentConfig& cfg, LossReport* training = nullptr);

/// Analytic target q(., t_min) of the configured data and schedule.
GaussianDensity target_density(const ExperimentConfig& cfg);

/// TV between the target and a KDE of n_samples exact target draws.
TvEstimate measure_kde_floor(const ExperimentConfig& cfg, const Density& target);

/// Samples, KDE and TV for every T in cfg.steps, then a log-log fit over the
/// points with tv >= floor_factor x floor. The same starting noise is used for
/// every T. `target` defaults to target_density(cfg).
ConvergenceReport run_convergence_experiment(const ExperimentConfig& cfg, const ScoreField& field,
                                             const Density* target = nullptr);

struct SweepOptions {
  /// Directory for per-cell checkpoints; empty disables saving.
  std::filesystem::path checkpoint_dir;
  /// Optional (layers, width) subset; empty runs the whole grid.
  std::vector<std::pair<int, int>> only_cells;
};

/// Trains every (layers, width) cell of cfg.sweep. Divergence is recorded in
/// the cell and the sweep continues.
TrainingSweepReport run_training_sweep(const ExperimentConfig& cfg, const SweepOptions& options = {});

/// Trajectory error against the RK4 reference for each sampler in cfg.order.
OrderStudyReport run_order_study(const ExperimentConfig& cfg);

/// Seeds consumed by each phase, keyed by phase label.
std::map<std::string, std::uint64_t> convergence_seeds(const ExperimentConfig& cfg);

}  // namespace opsplit
