#include "opsplit/report.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "opsplit/errors.hpp"

namespace opsplit {

using nlohmann::ordered_json;

namespace {

ordered_json fit_json(const std::optional<LogLogFit>& fit) {
  if (!fit) return nullptr;
  return {{"slope", fit->slope}, {"intercept", fit->intercept}, {"residuals", fit->residuals}};
}

std::string optional_number(const std::optional<LogLogFit>& fit, double LogLogFit::*field) {
  return fit ? format_double((*fit).*field) : std::string();
}

ordered_json seeds_json(const std::map<std::string, std::uint64_t>& seeds) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : seeds) j[k] = v;
  return j;
}

}  // namespace

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  throw ConfigError("unknown report format '" + name + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const SweepCell* TrainingSweepReport::find(int layers, int width) const {
  for (const auto& c : cells) {
    if (c.hidden_layers == layers && c.width == width) return &c;
  }
  return nullptr;
}

void write_csv(std::ostream& out, const ConvergenceReport& report) {
  out << "T,h,tv,tv_raw,tv_stderr,kde_floor,in_fit,slope,intercept\n";
  const std::string slope = optional_number(report.fit, &LogLogFit::slope);
  const std::string intercept = optional_number(report.fit, &LogLogFit::intercept);
  for (const auto& p : report.points) {
    out << p.steps << ',' << format_double(p.h) << ',' << format_double(p.tv.value) << ','
        << format_double(p.tv.raw_value) << ',' << format_double(p.tv.std_error) << ','
        << format_double(report.kde_floor) << ',' << (p.in_fit ? 1 : 0) << ',' << slope << ',' << intercept << '\n';
  }
}

void write_csv(std::ostream& out, const TrainingSweepReport& report) {
  out << "hidden_layers,width,status,initial_loss,final_train_loss,final_fresh_loss,eps_score,optimal_loss\n";
  for (const auto& c : report.cells) {
    out << c.hidden_layers << ',' << c.width << ',' << c.status << ',' << format_double(c.initial_loss) << ','
        << format_double(c.final_train_loss) << ',' << format_double(c.final_fresh_loss) << ','
        << format_double(c.eps_score) << ',' << format_double(report.optimal_loss) << '\n';
  }
}

void write_table_csv(std::ostream& out, const TrainingSweepReport& report) {
  out << "hidden_layers";
  for (int w : report.widths) out << ',' << w;
  out << '\n';
  for (int l : report.hidden_layers) {
    out << l;
    for (int w : report.widths) {
      const SweepCell* c = report.find(l, w);
      out << ',';
      if (c && c->status == "ok") out << format_double(c->final_train_loss);
    }
    out << '\n';
  }
}

void write_csv(std::ostream& out, const OrderStudyReport& report) {
  out << "scheme,tableau,T,h,error,reference_shift,slope\n";
  for (const auto& s : report.series) {
    const std::string slope = optional_number(s.fit, &LogLogFit::slope);
    for (const auto& p : s.points) {
      out << s.scheme << ',' << s.tableau << ',' << p.steps << ',' << format_double(p.h) << ','
          << format_double(p.error) << ',' << format_double(p.reference_shift) << ',' << slope << '\n';
    }
  }
}

ordered_json to_json(const ConvergenceReport& report) {
  ordered_json points = ordered_json::array();
  for (const auto& p : report.points) {
    points.push_back({{"T", p.steps},
                      {"h", p.h},
                      {"tv", p.tv.value},
                      {"tv_raw", p.tv.raw_value},
                      {"tv_stderr", p.tv.std_error},
                      {"n_mc", p.tv.n_mc},
                      {"tv_seed", p.tv.seed},
                      {"in_fit", p.in_fit}});
  }
  ordered_json j;
  j["score"] = report.score_kind;
  j["scheme"] = report.scheme;
  j["tableau"] = report.tableau;
  j["bandwidth_rule"] = report.bandwidth_rule;
  j["kde_floor"] = report.kde_floor;
  j["kde_floor_stderr"] = report.kde_floor_std_error;
  j["floor_factor"] = report.floor_factor;
  j["fit"] = fit_json(report.fit);
  if (report.score_error) {
    const auto& e = *report.score_error;
    j["score_error"] = {{"eps_score", e.eps_score}, {"eps_jac", e.eps_jac}, {"n_mc", e.n_mc}, {"time_grid", e.time_grid}};
  } else {
    j["score_error"] = nullptr;
  }
  j["points"] = points;
  j["seeds"] = seeds_json(report.seeds);
  j["config"] = report.config;
  return j;
}

ordered_json to_json(const TrainingSweepReport& report) {
  ordered_json cells = ordered_json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"hidden_layers", c.hidden_layers},
                     {"width", c.width},
                     {"status", c.status},
                     {"message", c.message},
                     {"initial_loss", c.initial_loss},
                     {"final_train_loss", c.final_train_loss},
                     {"final_fresh_loss", c.final_fresh_loss},
                     {"eps_score", c.eps_score},
                     {"checkpoint", c.checkpoint}});
  }
  ordered_json j;
  j["optimal_loss"] = report.optimal_loss;
  j["activation"] = report.activation;
  j["hidden_layers"] = report.hidden_layers;
  j["widths"] = report.widths;
  j["cells"] = cells;
  j["seeds"] = seeds_json(report.seeds);
  j["config"] = report.config;
  return j;
}

ordered_json to_json(const OrderStudyReport& report) {
  ordered_json series = ordered_json::array();
  for (const auto& s : report.series) {
    ordered_json points = ordered_json::array();
    for (const auto& p : s.points) {
      points.push_back({{"T", p.steps}, {"h", p.h}, {"error", p.error}, {"reference_shift", p.reference_shift}});
    }
    series.push_back({{"scheme", s.scheme}, {"tableau", s.tableau}, {"fit", fit_json(s.fit)}, {"points", points}});
  }
  ordered_json j;
  j["ref_factor"] = report.ref_factor;
  j["n_probe"] = report.n_probe;
  j["series"] = series;
  j["seeds"] = seeds_json(report.seeds);
  j["config"] = report.config;
  return j;
}

ordered_json to_json(const RunManifest& m) {
  ordered_json timings = ordered_json::object();
  for (const auto& [phase, seconds] : m.timings) timings[phase] = seconds;
  ordered_json j;
  j["version"] = kVersionTag;
  j["command"] = m.command;
  j["seeds"] = seeds_json(m.seeds);
  j["timings_seconds"] = timings;
  j["outputs"] = m.outputs;
  j["config"] = m.config;
  return j;
}

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& render) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  render(out);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

void write_samples_csv(const std::filesystem::path& path, const Eigen::MatrixXd& points) {
  write_file(path, [&](std::ostream& out) {
    for (Eigen::Index k = 0; k < points.rows(); ++k) out << (k ? "," : "") << 'x' << (k + 1);
    out << '\n';
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      for (Eigen::Index k = 0; k < points.rows(); ++k) out << (k ? "," : "") << format_double(points(k, j));
      out << '\n';
    }
  });
}

Eigen::MatrixXd read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open samples: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("samples " + path.string() + ": empty file");
  Eigen::Index d = 0;
  {
    std::stringstream header(line);
    std::string col;
    while (std::getline(header, col, ',')) {
      if (!col.empty() && col.back() == '\r') col.pop_back();
      if (col != "x" + std::to_string(d + 1)) {
        throw ConfigError("samples " + path.string() + ": header must be x1,...,xd");
      }
      ++d;
    }
  }
  if (d == 0) throw ConfigError("samples " + path.string() + ": empty header");
  std::vector<double> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index count = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const char* b = cell.data();
      const char* e = b + cell.size();
      while (e > b && (e[-1] == '\r' || e[-1] == ' ')) --e;
      const auto res = std::from_chars(b, e, v);
      if (res.ec != std::errc() || res.ptr != e) {
        throw ConfigError("samples " + path.string() + ": bad number on line " + std::to_string(row));
      }
      values.push_back(v);
      ++count;
    }
    if (count != d) throw ConfigError("samples " + path.string() + ": wrong column count on line " + std::to_string(row));
  }
  const auto n = static_cast<Eigen::Index>(values.size()) / d;
  return Eigen::Map<const Eigen::MatrixXd>(values.data(), d, n);
}

void write_trajectory_csv(const std::filesystem::path& path, const std::vector<Eigen::MatrixXd>& trajectory,
                          const std::vector<double>& times) {
  write_file(path, [&](std::ostream& out) {
    const Eigen::Index d = trajectory.empty() ? 0 : trajectory.front().rows();
    out << "step,t,particle";
    for (Eigen::Index k = 0; k < d; ++k) out << ",x" << (k + 1);
    out << '\n';
    for (std::size_t s = 0; s < trajectory.size(); ++s) {
      for (Eigen::Index j = 0; j < trajectory[s].cols(); ++j) {
        out << s << ',' << format_double(times[s]) << ',' << j;
        for (Eigen::Index k = 0; k < d; ++k) out << ',' << format_double(trajectory[s](k, j));
        out << '\n';
      }
    }
  });
}

}  // namespace opsplit
