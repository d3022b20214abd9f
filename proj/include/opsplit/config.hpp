#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "opsplit/metrics.hpp"
#include "opsplit/mlp.hpp"
#include "opsplit/sampler.hpp"
#include "opsplit/schedule.hpp"
#include "opsplit/score_field.hpp"

namespace opsplit {

struct SamplerSpec {
  SplittingScheme scheme = SplittingScheme::strang();
  RkTableau tableau = RkTableau::midpoint();
};

enum class ScoreSource { exact, mlp, train, zero };

const char* to_string(ScoreSource source);
ScoreSource score_source_from_string(const std::string& name);

struct ScoreSpec {
  ScoreSource source = ScoreSource::exact;
  std::filesystem::path checkpoint;  // for ScoreSource::mlp
  Architecture arch;
  TrainConfig train;
  bool train_seed_explicit = false;
};

struct MetricsSpec {
  Eigen::Index n_samples = 20000;
  Eigen::Index n_mc = 100000;
  BandwidthRule bandwidth = BandwidthRule::scott;
  /// TV points below floor_factor x (KDE floor) are left out of the slope fit.
  double floor_factor = 3.0;
  int eps_grid_points = 20;
  /// The noise parametrisation divides by sigma(t), which vanishes at t = 0.
  double eps_grid_start = 0.05;
  Eigen::Index eps_n_mc = 2000;
};

struct SweepSpec {
  std::vector<int> hidden_layers{1, 2, 3, 4};
  std::vector<int> widths{100, 200, 400, 800};
};

struct OrderStudySpec {
  std::vector<SamplerSpec> samplers{{SplittingScheme::strang(), RkTableau::midpoint()},
                                    {SplittingScheme::lie(), RkTableau::euler()}};
  std::vector<int> steps{16, 32, 64, 128, 256};
  int ref_factor = 64;
  Eigen::Index n_probe = 16;
};

/// Full experiment description. Every field has a default matching the
/// 2-D Gaussian setup, so an empty JSON object is a valid config.
struct ExperimentConfig {
  GaussianData data = GaussianData::testbed_2d();
  LinearBetaSchedule schedule;
  SamplerSpec sampler;
  std::vector<int> steps{8, 16, 32, 64, 128};
  ScoreSpec score;
  MetricsSpec metrics;
  SweepSpec sweep;
  OrderStudySpec order;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  /// Resolved training config: seed derived from the master seed unless set explicitly.
  TrainConfig resolved_train_config() const;
};

/// Parses and validates. Unknown keys are rejected so typos surface early.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON echo of a config (every field, resolved presets).
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

}  // namespace opsplit
