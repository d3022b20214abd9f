#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opsplit/metrics.hpp"

namespace opsplit {

enum class ReportFormat { csv, json };

ReportFormat report_format_from_string(const std::string& name);

/// Fixed 17-significant-digit rendering used by every CSV writer.
std::string format_double(double v);

struct ConvergencePoint {
  int steps = 0;
  double h = 0.0;
  TvEstimate tv;
  bool in_fit = false;
};

/// TV against the target for each step count, with a log-log fit over the
/// points at or above floor_factor x kde_floor.
struct ConvergenceReport {
  std::string score_kind;
  std::string scheme;
  std::string tableau;
  std::string bandwidth_rule;
  double kde_floor = 0.0;
  double kde_floor_std_error = 0.0;
  double floor_factor = 3.0;
  std::vector<ConvergencePoint> points;
  std::optional<LogLogFit> fit;  // absent when fewer than 3 points qualify
  std::optional<ScoreErrorReport> score_error;  // learned fields only
  nlohmann::ordered_json config;
  std::map<std::string, std::uint64_t> seeds;
};

struct SweepCell {
  int hidden_layers = 0;
  int width = 0;
  std::string status = "ok";  // "ok" or "diverged"
  std::string message;
  double initial_loss = 0.0;
  double final_train_loss = 0.0;
  double final_fresh_loss = 0.0;
  double eps_score = 0.0;  // against the exact score
  std::string checkpoint;
};

struct TrainingSweepReport {
  double optimal_loss = 0.0;
  std::string activation;
  std::vector<int> hidden_layers;
  std::vector<int> widths;
  std::vector<SweepCell> cells;  // row-major over (hidden_layers, widths)
  nlohmann::ordered_json config;
  std::map<std::string, std::uint64_t> seeds;

  const SweepCell* find(int layers, int width) const;
};

struct OrderPoint {
  int steps = 0;
  double h = 0.0;
  double error = 0.0;
  double reference_shift = 0.0;
};

struct OrderSeries {
  std::string scheme;
  std::string tableau;
  std::vector<OrderPoint> points;
  std::optional<LogLogFit> fit;
};

struct OrderStudyReport {
  int ref_factor = 64;
  Eigen::Index n_probe = 0;
  std::vector<OrderSeries> series;
  nlohmann::ordered_json config;
  std::map<std::string, std::uint64_t> seeds;
};

/// Columns T,h,tv,tv_raw,tv_stderr,kde_floor,in_fit,slope,intercept.
void write_csv(std::ostream& out, const ConvergenceReport& report);
/// Long format: one row per cell.
void write_csv(std::ostream& out, const TrainingSweepReport& report);
/// Table layout: one row per hidden-layer count, one column per width.
void write_table_csv(std::ostream& out, const TrainingSweepReport& report);
void write_csv(std::ostream& out, const OrderStudyReport& report);

nlohmann::ordered_json to_json(const ConvergenceReport& report);
nlohmann::ordered_json to_json(const TrainingSweepReport& report);
nlohmann::ordered_json to_json(const OrderStudyReport& report);

/// Writes the report in the given format. Output bytes depend only on the
/// report content. Throws IoError naming the path on failure.
template <typename Report>
void emit_report(const Report& report, ReportFormat format, const std::filesystem::path& path);

/// Shared file writer; the callback renders into the stream.
void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& render);

template <typename Report>
void emit_report(const Report& report, ReportFormat format, const std::filesystem::path& path) {
  write_file(path, [&](std::ostream& out) {
    if (format == ReportFormat::csv) {
      write_csv(out, report);
    } else {
      out << to_json(report).dump(2) << '\n';
    }
  });
}

/// Everything needed to attribute and re-run each phase of a harness run.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::pair<std::string, double>> timings;  // seconds per phase
  std::vector<std::string> outputs;
};

inline constexpr const char* kVersionTag = "opsplit 0.1.0";

nlohmann::ordered_json to_json(const RunManifest& manifest);

/// CSV with header x1,...,xd and one row per column of points.
void write_samples_csv(const std::filesystem::path& path, const Eigen::MatrixXd& points);
Eigen::MatrixXd read_samples_csv(const std::filesystem::path& path);
/// Rows step,t,particle,x1..xd; trajectory[k] is the state after k steps.
void write_trajectory_csv(const std::filesystem::path& path, const std::vector<Eigen::MatrixXd>& trajectory,
                          const std::vector<double>& times);

}  // namespace opsplit
