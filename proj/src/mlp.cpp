#include "opsplit/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <unsupported/Eigen/SpecialFunctions>
#include <json.hpp>

#include "opsplit/errors.hpp"
#include "opsplit/random.hpp"

namespace opsplit {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw ConfigError("mlp: need at least input and output layer sizes");
  for (int s : sizes) {
    if (s <= 0) throw ConfigError("mlp: layer sizes must be positive");
  }
  if (sizes.front() != sizes.back() + 1) throw ConfigError("mlp: input size must equal output size + 1 (time input)");
}

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Parameters in the working precision of a computation.
template <typename S>
struct Params {
  std::vector<Mat<S>> w;
  std::vector<Vec<S>> b;

  std::size_t size() const { return w.size(); }
};

template <typename S>
Params<S> params_of(const Mlp& net) {
  Params<S> p;
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    p.w.push_back(net.weight(k).cast<S>());
    p.b.push_back(net.bias(k).cast<S>());
  }
  return p;
}

// Standard normal CDF, elementwise.
template <typename S>
Mat<S> normal_cdf(const Mat<S>& z) {
  return (S(0.5) * (S(1) + (z.array() * S(kInvSqrt2)).erf())).matrix();
}

template <typename S>
Mat<S> forward_pass(const std::vector<Mat<S>>& w, const std::vector<Vec<S>>& b, const Mat<S>& inputs) {
  Mat<S> a = inputs;
  for (std::size_t k = 0; k < w.size(); ++k) {
    Mat<S> z = w[k] * a;
    z.colwise() += b[k];
    if (k + 1 < w.size()) {
      a = z.cwiseProduct(normal_cdf(z));
    } else {
      a = std::move(z);
    }
  }
  return a;
}

template <typename S>
double backprop(const Params<S>& p, const Mat<S>& inputs, const Mat<S>& targets, Params<S>& grad) {
  const std::size_t layers = p.size();
  std::vector<Mat<S>> pre(layers), cdf(layers), act(layers + 1);
  act[0] = inputs;
  for (std::size_t k = 0; k < layers; ++k) {
    pre[k] = p.w[k] * act[k];
    pre[k].colwise() += p.b[k];
    if (k + 1 < layers) {
      cdf[k] = normal_cdf(pre[k]);
      act[k + 1] = pre[k].cwiseProduct(cdf[k]);
    } else {
      act[k + 1] = pre[k];
    }
  }
  const Mat<S> diff = act[layers] - targets;
  const double denom = static_cast<double>(diff.size());
  const double loss = diff.template cast<double>().squaredNorm() / denom;

  grad.w.resize(layers);
  grad.b.resize(layers);
  Mat<S> delta = S(2.0 / denom) * diff;
  for (std::size_t k = layers; k-- > 0;) {
    grad.w[k].noalias() = delta * act[k].transpose();
    grad.b[k] = delta.rowwise().sum();
    if (k > 0) {
      // gelu'(z) = Phi(z) + z phi(z)
      const auto& z = pre[k - 1].array();
      const Mat<S> dact =
          (cdf[k - 1].array() + z * S(kInvSqrt2Pi) * (S(-0.5) * z.square()).exp()).matrix();
      Mat<S> back = p.w[k].transpose() * delta;
      delta = back.cwiseProduct(dact);
    }
  }
  return loss;
}

}  // namespace

double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z * kInvSqrt2)); }

double gelu_derivative(double z) {
  return 0.5 * (1.0 + std::erf(z * kInvSqrt2)) + z * kInvSqrt2Pi * std::exp(-0.5 * z * z);
}

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  check_sizes(sizes_);
  for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
    weights_.push_back(Eigen::MatrixXd::Zero(sizes_[k + 1], sizes_[k]));
    biases_.push_back(Eigen::VectorXd::Zero(sizes_[k + 1]));
  }
}

Mlp Mlp::lecun_normal(std::vector<int> layer_sizes, std::uint64_t seed) {
  Mlp net(std::move(layer_sizes));
  Rng rng(seed);
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    auto& w = net.weights_[k];
    const double scale = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    // Row-major fill order so the draw sequence matches the checkpoint layout.
    std::normal_distribution<double> normal(0.0, scale);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = normal(rng);
    }
  }
  return net;
}

Mlp Mlp::fan_in_uniform(std::vector<int> layer_sizes, std::uint64_t seed) {
  Mlp net(std::move(layer_sizes));
  Rng rng(seed);
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    auto& w = net.weights_[k];
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = unif(rng);
    }
    for (Eigen::Index i = 0; i < w.rows(); ++i) net.biases_[k](i) = unif(rng);
  }
  return net;
}

std::vector<int> Mlp::layer_sizes_for(int dim, int hidden_layers, int width) {
  if (dim <= 0 || hidden_layers < 0 || width <= 0) throw ConfigError("mlp: invalid architecture");
  std::vector<int> sizes{dim + 1};
  sizes.insert(sizes.end(), static_cast<std::size_t>(hidden_layers), width);
  sizes.push_back(dim);
  return sizes;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < layer_count(); ++k) n += weights_[k].size() + biases_[k].size();
  return n;
}

bool Mlp::all_finite() const {
  for (std::size_t k = 0; k < layer_count(); ++k) {
    if (!weights_[k].allFinite() || !biases_[k].allFinite()) return false;
  }
  return true;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, double t) const {
  if (x.rows() != output_dim()) {
    throw ConfigError("mlp: input has " + std::to_string(x.rows()) + " rows, expected " +
                      std::to_string(output_dim()));
  }
  Eigen::MatrixXd inputs(x.rows() + 1, x.cols());
  inputs.topRows(x.rows()) = x;
  inputs.bottomRows(1).setConstant(t);
  return forward_inputs(inputs);
}

Eigen::MatrixXd Mlp::forward_inputs(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_dim()) throw ConfigError("mlp: input dimension mismatch");
  return forward_pass(weights_, biases_, inputs);
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.sizes_ != b.sizes_) return false;
  for (std::size_t k = 0; k < a.layer_count(); ++k) {
    if (a.weights_[k] != b.weights_[k] || a.biases_[k] != b.biases_[k]) return false;
  }
  return true;
}

double loss_and_gradient(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                         MlpGradient& grad) {
  const Params<double> p = params_of<double>(net);
  Params<double> g;
  const double loss = backprop(p, inputs, targets, g);
  grad.weights = std::move(g.w);
  grad.biases = std::move(g.b);
  return loss;
}

double mean_squared_error(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
  // Column blocks bound the size of the hidden activations.
  constexpr Eigen::Index kBlock = 4096;
  double sum = 0.0;
  for (Eigen::Index c = 0; c < inputs.cols(); c += kBlock) {
    const Eigen::Index n = std::min(kBlock, inputs.cols() - c);
    sum += (net.forward_inputs(inputs.middleCols(c, n)) - targets.middleCols(c, n)).squaredNorm();
  }
  return sum / static_cast<double>(targets.size());
}

void TrainConfig::validate() const {
  if (n_train <= 0 || n_iters < 0 || batch_size <= 0) throw ConfigError("train: counts must be positive");
  if (!(lr_end > 0.0 && lr_start >= lr_end)) throw ConfigError("train: need lr_start >= lr_end > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
    throw ConfigError("train: invalid Adam hyperparameters");
  }
}

double TrainConfig::learning_rate(int k) const {
  if (n_iters == 0) return lr_start;
  return lr_start * std::pow(lr_end / lr_start, static_cast<double>(k) / static_cast<double>(n_iters));
}

TrainingSet make_training_set(const GaussianData& data, const LinearBetaSchedule& sched, int n,
                              std::uint64_t seed) {
  const Eigen::Index d = data.dim();
  Rng rng(seed);
  const Eigen::MatrixXd chol = data.sigma_mat.llt().matrixL();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  TrainingSet set{Eigen::MatrixXd(d + 1, n), Eigen::MatrixXd(d, n)};
  Eigen::VectorXd z(d), xi(d);
  for (int j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) z(i) = normal(rng);
    const double t = unif(rng);
    for (Eigen::Index i = 0; i < d; ++i) xi(i) = normal(rng);
    const ScheduleEval s = eval_schedule(sched, t);
    set.inputs.col(j).head(d) = s.alpha * (data.mu + chol * z) + s.sigma * xi;
    set.inputs(d, j) = t;
    set.targets.col(j) = xi;
  }
  return set;
}

namespace {

// One fused pass over the parameter block.
template <typename T>
void adam_update(T& p, const T& g, T& m, T& v, const TrainConfig& cfg, double lr, double c1, double c2) {
  using S = typename T::Scalar;
  const S b1 = static_cast<S>(cfg.adam_beta1), b2 = static_cast<S>(cfg.adam_beta2);
  const S step = static_cast<S>(lr / c1);
  const S inv_c2 = static_cast<S>(1.0 / c2);
  const S eps = static_cast<S>(cfg.adam_eps);
  S* pp = p.data();
  S* mp = m.data();
  S* vp = v.data();
  const S* gp = g.data();
  const Eigen::Index n = p.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mi = b1 * mp[i] + (S(1) - b1) * gp[i];
    const S vi = b2 * vp[i] + (S(1) - b2) * gp[i] * gp[i];
    mp[i] = mi;
    vp[i] = vi;
    pp[i] -= step * mi / (std::sqrt(vi * inv_c2) + eps);
  }
}

// Mean squared error with the network evaluated in precision S and the sum
// accumulated in double.
template <typename S>
double blocked_mse(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
  constexpr Eigen::Index kBlock = 4096;
  const Params<S> p = params_of<S>(net);
  double sum = 0.0;
  for (Eigen::Index c = 0; c < inputs.cols(); c += kBlock) {
    const Eigen::Index n = std::min(kBlock, inputs.cols() - c);
    const Mat<S> out = forward_pass(p.w, p.b, Mat<S>(inputs.middleCols(c, n).template cast<S>()));
    sum += (out.template cast<double>() - targets.middleCols(c, n)).squaredNorm();
  }
  return sum / static_cast<double>(targets.size());
}

// Minibatch Adam in precision S, starting from and writing back into net.
template <typename S>
void adam_loop(const TrainConfig& cfg, const TrainingSet& train, double initial_loss, Mlp& net,
               std::vector<double>& curve) {
  Params<S> p = params_of<S>(net);
  Params<S> m, v, grad;
  for (std::size_t k = 0; k < p.size(); ++k) {
    m.w.push_back(Mat<S>::Zero(p.w[k].rows(), p.w[k].cols()));
    m.b.push_back(Vec<S>::Zero(p.b[k].size()));
  }
  v = m;

  const Mat<S> inputs = train.inputs.cast<S>();
  const Mat<S> targets = train.targets.cast<S>();
  Rng batch_rng(derive_seed(cfg.seed, "train/batches"));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(cfg.n_train));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t cursor = order.size();

  const int batch = std::min(cfg.batch_size, cfg.n_train);
  Mat<S> xb(inputs.rows(), batch);
  Mat<S> yb(targets.rows(), batch);
  double c1_pow = 1.0;
  double c2_pow = 1.0;

  for (int k = 0; k < cfg.n_iters; ++k) {
    for (int j = 0; j < batch; ++j) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), batch_rng);
        cursor = 0;
      }
      const Eigen::Index idx = order[cursor++];
      xb.col(j) = inputs.col(idx);
      yb.col(j) = targets.col(idx);
    }
    const double loss = backprop(p, xb, yb, grad);
    if (!std::isfinite(loss) || loss > 10.0 * initial_loss) {
      throw NumericError("training diverged at iteration " + std::to_string(k) + " (loss " +
                         std::to_string(loss) + ")");
    }
    curve.push_back(loss);

    c1_pow *= cfg.adam_beta1;
    c2_pow *= cfg.adam_beta2;
    const double lr = cfg.learning_rate(k);
    for (std::size_t l = 0; l < p.size(); ++l) {
      adam_update(p.w[l], grad.w[l], m.w[l], v.w[l], cfg, lr, 1.0 - c1_pow, 1.0 - c2_pow);
      adam_update(p.b[l], grad.b[l], m.b[l], v.b[l], cfg, lr, 1.0 - c1_pow, 1.0 - c2_pow);
    }
  }

  for (std::size_t l = 0; l < p.size(); ++l) {
    net.weight(l) = p.w[l].template cast<double>();
    net.bias(l) = p.b[l].template cast<double>();
  }
}

}  // namespace

const char* to_string(TrainPrecision p) { return p == TrainPrecision::float32 ? "float32" : "float64"; }

const char* to_string(WeightInit init) {
  return init == WeightInit::lecun_normal ? "lecun_normal" : "fan_in_uniform";
}

WeightInit weight_init_from_string(const std::string& name) {
  if (name == "lecun_normal") return WeightInit::lecun_normal;
  if (name == "fan_in_uniform") return WeightInit::fan_in_uniform;
  throw ConfigError("unknown weight init '" + name + "' (expected lecun_normal or fan_in_uniform)");
}

TrainPrecision train_precision_from_string(const std::string& name) {
  if (name == "float32") return TrainPrecision::float32;
  if (name == "float64") return TrainPrecision::float64;
  throw ConfigError("unknown training precision '" + name + "' (expected float32 or float64)");
}

TrainResult train_noise_predictor(const TrainConfig& cfg, const Architecture& arch, const GaussianData& data,
                                  const LinearBetaSchedule& sched) {
  cfg.validate();
  data.validate();
  sched.validate();
  const int d = static_cast<int>(data.dim());
  const TrainingSet train = make_training_set(data, sched, cfg.n_train, derive_seed(cfg.seed, "train/data"));

  TrainResult result;
  const auto sizes = Mlp::layer_sizes_for(d, arch.hidden_layers, arch.width);
  const std::uint64_t init_seed = derive_seed(cfg.seed, "train/init");
  result.net = cfg.init == WeightInit::lecun_normal ? Mlp::lecun_normal(sizes, init_seed)
                                                    : Mlp::fan_in_uniform(sizes, init_seed);
  LossReport& report = result.report;
  // Reported losses use the training precision; large networks spend a
  // noticeable share of their budget here otherwise.
  const auto loss_of = [&](const TrainingSet& set) {
    return cfg.precision == TrainPrecision::float32 ? blocked_mse<float>(result.net, set.inputs, set.targets)
                                                    : blocked_mse<double>(result.net, set.inputs, set.targets);
  };
  report.initial_loss = loss_of(train);
  report.curve.reserve(static_cast<std::size_t>(cfg.n_iters));
  if (cfg.n_iters > 0) {
    if (cfg.precision == TrainPrecision::float32) {
      adam_loop<float>(cfg, train, report.initial_loss, result.net, report.curve);
    } else {
      adam_loop<double>(cfg, train, report.initial_loss, result.net, report.curve);
    }
  }

  report.final_train_loss = loss_of(train);
  const TrainingSet fresh = make_training_set(data, sched, cfg.n_train, derive_seed(cfg.seed, "train/fresh"));
  report.final_fresh_loss = loss_of(fresh);
  report.optimal_loss = optimal_loss_oracle(data, sched);
  return result;
}

double optimal_loss_integrand(const GaussianData& data, const LinearBetaSchedule& sched, double t) {
  const MarginalLaw law = marginal_law(data, sched, t);
  const double sigma = eval_schedule(sched, t).sigma;
  const Eigen::Index d = data.dim();
  const Eigen::MatrixXd precision = law.cov.llt().solve(Eigen::MatrixXd::Identity(d, d));
  return 1.0 - sigma * sigma * precision.trace() / static_cast<double>(d);
}

double optimal_loss_oracle(const GaussianData& data, const LinearBetaSchedule& sched) {
  data.validate();
  sched.validate();
  double error = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      [&](double t) { return optimal_loss_integrand(data, sched, t); }, 0.0, 1.0, 30, 1e-12, &error);
  if (!(error <= 1e-6)) throw NumericError("optimal loss quadrature did not reach 1e-6");
  return value;
}

void save_checkpoint(const std::filesystem::path& path, const Mlp& net, const TrainConfig* cfg) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["activation"] = kActivationId;
  j["layer_sizes"] = net.layer_sizes();
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < net.layer_count(); ++k) {
    const auto& w = net.weight(k);
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    const auto& b = net.bias(k);
    layers.push_back({{"weight", flat}, {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  if (cfg) {
    j["train_config"] = {{"n_train", cfg->n_train},       {"n_iters", cfg->n_iters},
                         {"lr_start", cfg->lr_start},     {"lr_end", cfg->lr_end},
                         {"batch_size", cfg->batch_size}, {"seed", cfg->seed},
                         {"adam_beta1", cfg->adam_beta1}, {"adam_beta2", cfg->adam_beta2},
                         {"adam_eps", cfg->adam_eps},     {"precision", to_string(cfg->precision)},
                         {"init", to_string(cfg->init)}};
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ConfigError("not an mlp checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
    if (j.at("activation").get<std::string>() != kActivationId) throw ConfigError("unsupported activation");
    Checkpoint ck{Mlp(j.at("layer_sizes").get<std::vector<int>>()), std::nullopt};
    const auto& layers = j.at("layers");
    if (layers.size() != ck.net.layer_count()) throw ConfigError("layer count mismatch");
    for (std::size_t k = 0; k < ck.net.layer_count(); ++k) {
      auto& w = ck.net.weight(k);
      const auto flat = layers[k].at("weight").get<std::vector<double>>();
      const auto bias = layers[k].at("bias").get<std::vector<double>>();
      if (flat.size() != static_cast<std::size_t>(w.size()) || bias.size() != static_cast<std::size_t>(w.rows())) {
        throw ConfigError("layer " + std::to_string(k) + " has wrong parameter count");
      }
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[static_cast<std::size_t>(r * w.cols() + c)];
      }
      ck.net.bias(k) = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    }
    if (j.contains("train_config")) {
      const auto& c = j["train_config"];
      TrainConfig cfg;
      cfg.n_train = c.at("n_train");
      cfg.n_iters = c.at("n_iters");
      cfg.lr_start = c.at("lr_start");
      cfg.lr_end = c.at("lr_end");
      cfg.batch_size = c.at("batch_size");
      cfg.seed = c.at("seed");
      cfg.adam_beta1 = c.at("adam_beta1");
      cfg.adam_beta2 = c.at("adam_beta2");
      cfg.adam_eps = c.at("adam_eps");
      cfg.precision = train_precision_from_string(c.at("precision").get<std::string>());
      cfg.init = weight_init_from_string(c.at("init").get<std::string>());
      ck.train_config = cfg;
    }
    if (!ck.net.all_finite()) throw ConfigError("non-finite parameters");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace opsplit
