#include "opsplit/config.hpp"

#include <fstream>
#include <set>

#include "opsplit/errors.hpp"
#include "opsplit/random.hpp"

namespace opsplit {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

SplittingScheme parse_scheme(const json& j) {
  if (j.is_string()) return SplittingScheme::by_name(j.get<std::string>());
  allow_keys(j, "scheme", {"name", "a", "b"});
  SplittingScheme s{j.value("name", std::string("custom")), j.at("a").get<std::vector<double>>(),
                    j.at("b").get<std::vector<double>>()};
  s.validate();
  return s;
}

RkTableau parse_tableau(const json& j) {
  if (j.is_string()) return RkTableau::by_name(j.get<std::string>());
  allow_keys(j, "tableau", {"name", "c", "a", "b", "order"});
  RkTableau tab;
  tab.name = j.value("name", std::string("custom"));
  tab.c = j.at("c").get<std::vector<double>>();
  tab.b = j.at("b").get<std::vector<double>>();
  tab.order = j.value("order", 1);
  const auto rows = j.at("a").get<std::vector<std::vector<double>>>();
  const auto s = static_cast<Eigen::Index>(tab.b.size());
  tab.a = Eigen::MatrixXd::Zero(s, s);
  if (static_cast<Eigen::Index>(rows.size()) != s) throw ConfigError("tableau " + tab.name + ": a must have s rows");
  for (Eigen::Index i = 0; i < s; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != s) throw ConfigError("tableau " + tab.name + ": a must be s x s");
    for (Eigen::Index k = 0; k < s; ++k) tab.a(i, k) = rows[i][k];
  }
  tab.validate();
  return tab;
}

SamplerSpec parse_sampler(const json& j) {
  allow_keys(j, "sampler", {"scheme", "tableau"});
  SamplerSpec spec;
  if (j.contains("scheme")) spec.scheme = parse_scheme(j["scheme"]);
  if (j.contains("tableau")) spec.tableau = parse_tableau(j["tableau"]);
  return spec;
}

ordered_json scheme_json(const SplittingScheme& s) { return {{"name", s.name}, {"a", s.a}, {"b", s.b}}; }

ordered_json tableau_json(const RkTableau& t) {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < t.a.rows(); ++i) {
    rows.emplace_back();
    for (Eigen::Index k = 0; k < t.a.cols(); ++k) rows.back().push_back(t.a(i, k));
  }
  return {{"name", t.name}, {"c", t.c}, {"a", rows}, {"b", t.b}, {"order", t.order}};
}

ordered_json sampler_json(const SamplerSpec& s) {
  return {{"scheme", scheme_json(s.scheme)}, {"tableau", tableau_json(s.tableau)}};
}

bool strictly_increasing(const std::vector<int>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] <= v[i - 1]) return false;
  }
  return true;
}

}  // namespace

const char* to_string(ScoreSource source) {
  switch (source) {
    case ScoreSource::exact:
      return "exact";
    case ScoreSource::mlp:
      return "mlp";
    case ScoreSource::train:
      return "train";
    case ScoreSource::zero:
      return "zero";
  }
  return "unknown";
}

ScoreSource score_source_from_string(const std::string& name) {
  if (name == "exact") return ScoreSource::exact;
  if (name == "mlp") return ScoreSource::mlp;
  if (name == "train") return ScoreSource::train;
  if (name == "zero") return ScoreSource::zero;
  throw ConfigError("unknown score source '" + name + "' (expected exact, mlp, train or zero)");
}

void ExperimentConfig::validate() const {
  data.validate();
  schedule.validate();
  sampler.scheme.validate();
  sampler.tableau.validate();
  if (steps.empty() || !strictly_increasing(steps) || steps.front() < 1) {
    throw ConfigError("steps: T list must be non-empty, positive and strictly increasing");
  }
  if (metrics.n_samples < 100) throw ConfigError("metrics.n_samples must be >= 100");
  if (metrics.n_mc < 1000) throw ConfigError("metrics.n_mc must be >= 1000");
  if (!(metrics.floor_factor > 0.0)) throw ConfigError("metrics.floor_factor must be positive");
  if (metrics.eps_grid_points < 1 || !(metrics.eps_grid_start >= 0.0 && metrics.eps_grid_start <= 1.0) ||
      metrics.eps_n_mc < 1) {
    throw ConfigError("metrics: invalid score-error grid");
  }
  if (score.source == ScoreSource::mlp && score.checkpoint.empty()) {
    throw ConfigError("score.checkpoint is required for source 'mlp'");
  }
  if (score.arch.hidden_layers < 1 || score.arch.width < 1) throw ConfigError("score.architecture is invalid");
  score.train.validate();
  if (sweep.hidden_layers.empty() || sweep.widths.empty()) throw ConfigError("training_sweep: empty grid");
  for (int v : sweep.hidden_layers) {
    if (v < 1) throw ConfigError("training_sweep: hidden layer counts must be >= 1");
  }
  for (int v : sweep.widths) {
    if (v < 1) throw ConfigError("training_sweep: widths must be >= 1");
  }
  if (order.samplers.empty()) throw ConfigError("order_study: no samplers listed");
  for (const auto& s : order.samplers) {
    s.scheme.validate();
    s.tableau.validate();
  }
  if (order.steps.empty() || !strictly_increasing(order.steps) || order.steps.front() < 1) {
    throw ConfigError("order_study.steps must be non-empty, positive and strictly increasing");
  }
  if (order.ref_factor < 16) throw ConfigError("order_study.ref_factor must be >= 16");
  if (order.n_probe < 1) throw ConfigError("order_study.n_probe must be >= 1");
}

TrainConfig ExperimentConfig::resolved_train_config() const {
  TrainConfig cfg = score.train;
  if (!score.train_seed_explicit) cfg.seed = derive_seed(seed, "train");
  return cfg;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  try {
    allow_keys(j, "config",
               {"data", "schedule", "sampler", "steps", "score", "metrics", "training_sweep", "order_study", "seed",
                "output_dir"});
    if (j.contains("data")) {
      const auto& d = j["data"];
      allow_keys(d, "data", {"mu", "sigma"});
      const auto mu = d.at("mu").get<std::vector<double>>();
      const auto rows = d.at("sigma").get<std::vector<std::vector<double>>>();
      const auto n = static_cast<Eigen::Index>(mu.size());
      cfg.data.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), n);
      cfg.data.sigma_mat.resize(n, n);
      if (static_cast<Eigen::Index>(rows.size()) != n) throw ConfigError("data.sigma must be d x d");
      for (Eigen::Index r = 0; r < n; ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != n) throw ConfigError("data.sigma must be d x d");
        for (Eigen::Index c = 0; c < n; ++c) cfg.data.sigma_mat(r, c) = rows[r][c];
      }
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      allow_keys(s, "schedule", {"beta0", "beta1", "t_min"});
      read(s, "beta0", cfg.schedule.beta0);
      read(s, "beta1", cfg.schedule.beta1);
      read(s, "t_min", cfg.schedule.t_min);
    }
    if (j.contains("sampler")) cfg.sampler = parse_sampler(j["sampler"]);
    read(j, "steps", cfg.steps);
    if (j.contains("score")) {
      const auto& s = j["score"];
      allow_keys(s, "score", {"source", "checkpoint", "architecture", "train", "activation"});
      if (s.contains("activation") && s["activation"].get<std::string>() != kActivationId) {
        throw ConfigError("score.activation: only '" + std::string(kActivationId) + "' is supported");
      }
      if (s.contains("source")) cfg.score.source = score_source_from_string(s["source"].get<std::string>());
      if (s.contains("checkpoint")) cfg.score.checkpoint = s["checkpoint"].get<std::string>();
      if (s.contains("architecture")) {
        const auto& a = s["architecture"];
        allow_keys(a, "score.architecture", {"hidden_layers", "width"});
        read(a, "hidden_layers", cfg.score.arch.hidden_layers);
        read(a, "width", cfg.score.arch.width);
      }
      if (s.contains("train")) {
        const auto& t = s["train"];
        allow_keys(t, "score.train",
                   {"n_train", "n_iters", "lr_start", "lr_end", "batch_size", "seed", "adam_beta1", "adam_beta2",
                    "adam_eps", "precision", "init"});
        auto& tc = cfg.score.train;
        read(t, "n_train", tc.n_train);
        read(t, "n_iters", tc.n_iters);
        read(t, "lr_start", tc.lr_start);
        read(t, "lr_end", tc.lr_end);
        read(t, "batch_size", tc.batch_size);
        read(t, "adam_beta1", tc.adam_beta1);
        read(t, "adam_beta2", tc.adam_beta2);
        read(t, "adam_eps", tc.adam_eps);
        if (t.contains("precision")) tc.precision = train_precision_from_string(t["precision"].get<std::string>());
        if (t.contains("init")) tc.init = weight_init_from_string(t["init"].get<std::string>());
        if (t.contains("seed")) {
          tc.seed = t["seed"].get<std::uint64_t>();
          cfg.score.train_seed_explicit = true;
        }
      }
    }
    if (j.contains("metrics")) {
      const auto& m = j["metrics"];
      allow_keys(m, "metrics",
                 {"n_samples", "n_mc", "bandwidth", "floor_factor", "eps_grid_points", "eps_grid_start", "eps_n_mc"});
      read(m, "n_samples", cfg.metrics.n_samples);
      read(m, "n_mc", cfg.metrics.n_mc);
      if (m.contains("bandwidth")) cfg.metrics.bandwidth = bandwidth_rule_from_string(m["bandwidth"].get<std::string>());
      read(m, "floor_factor", cfg.metrics.floor_factor);
      read(m, "eps_grid_points", cfg.metrics.eps_grid_points);
      read(m, "eps_grid_start", cfg.metrics.eps_grid_start);
      read(m, "eps_n_mc", cfg.metrics.eps_n_mc);
    }
    if (j.contains("training_sweep")) {
      const auto& s = j["training_sweep"];
      allow_keys(s, "training_sweep", {"hidden_layers", "widths"});
      read(s, "hidden_layers", cfg.sweep.hidden_layers);
      read(s, "widths", cfg.sweep.widths);
    }
    if (j.contains("order_study")) {
      const auto& o = j["order_study"];
      allow_keys(o, "order_study", {"samplers", "steps", "ref_factor", "n_probe"});
      if (o.contains("samplers")) {
        cfg.order.samplers.clear();
        for (const auto& s : o["samplers"]) cfg.order.samplers.push_back(parse_sampler(s));
      }
      read(o, "steps", cfg.order.steps);
      read(o, "ref_factor", cfg.order.ref_factor);
      read(o, "n_probe", cfg.order.n_probe);
    }
    read(j, "seed", cfg.seed);
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

ordered_json to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  std::vector<std::vector<double>> sigma;
  for (Eigen::Index r = 0; r < cfg.data.sigma_mat.rows(); ++r) {
    sigma.emplace_back();
    for (Eigen::Index c = 0; c < cfg.data.sigma_mat.cols(); ++c) sigma.back().push_back(cfg.data.sigma_mat(r, c));
  }
  j["data"] = {{"mu", std::vector<double>(cfg.data.mu.data(), cfg.data.mu.data() + cfg.data.mu.size())},
               {"sigma", sigma}};
  j["schedule"] = {{"beta0", cfg.schedule.beta0}, {"beta1", cfg.schedule.beta1}, {"t_min", cfg.schedule.t_min}};
  j["sampler"] = sampler_json(cfg.sampler);
  j["steps"] = cfg.steps;
  const TrainConfig tc = cfg.resolved_train_config();
  j["score"] = {{"source", to_string(cfg.score.source)},
                {"checkpoint", cfg.score.checkpoint.string()},
                {"architecture", {{"hidden_layers", cfg.score.arch.hidden_layers}, {"width", cfg.score.arch.width}}},
                {"train",
                 {{"n_train", tc.n_train},
                  {"n_iters", tc.n_iters},
                  {"lr_start", tc.lr_start},
                  {"lr_end", tc.lr_end},
                  {"batch_size", tc.batch_size},
                  {"seed", tc.seed},
                  {"adam_beta1", tc.adam_beta1},
                  {"adam_beta2", tc.adam_beta2},
                  {"adam_eps", tc.adam_eps},
                  {"precision", to_string(tc.precision)}, {"init", to_string(tc.init)}}},
                {"activation", kActivationId}};
  j["metrics"] = {{"n_samples", cfg.metrics.n_samples},       {"n_mc", cfg.metrics.n_mc},
                  {"bandwidth", to_string(cfg.metrics.bandwidth)}, {"floor_factor", cfg.metrics.floor_factor},
                  {"eps_grid_points", cfg.metrics.eps_grid_points}, {"eps_grid_start", cfg.metrics.eps_grid_start},
                  {"eps_n_mc", cfg.metrics.eps_n_mc}};
  j["training_sweep"] = {{"hidden_layers", cfg.sweep.hidden_layers}, {"widths", cfg.sweep.widths}};
  ordered_json samplers = ordered_json::array();
  for (const auto& s : cfg.order.samplers) samplers.push_back(sampler_json(s));
  j["order_study"] = {{"samplers", samplers},
                      {"steps", cfg.order.steps},
                      {"ref_factor", cfg.order.ref_factor},
                      {"n_probe", cfg.order.n_probe}};
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.string();
  return j;
}

}  // namespace opsplit
