#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opsplit/schedule.hpp"
#include "opsplit/score_field.hpp"

namespace opsplit {

/// Hidden-layer nonlinearity: GELU with the exact erf form, z * Phi(z).
inline constexpr const char* kActivationId = "gelu-erf";

/// Fully connected noise predictor eps(x, t). Input is (x, t) with t appended
/// as one raw coordinate; every hidden layer applies GELU, the output layer is
/// affine.
class Mlp {
 public:
  Mlp() = default;
  /// All weights and biases zero. layer_sizes = {d + 1, hidden..., d}.
  explicit Mlp(std::vector<int> layer_sizes);

  /// Fan-in scaled normal weights (std 1/sqrt(fan_in)), zero biases.
  static Mlp lecun_normal(std::vector<int> layer_sizes, std::uint64_t seed);
  static Mlp fan_in_uniform(std::vector<int> layer_sizes, std::uint64_t seed);
  /// {d + 1, width x hidden_layers, d}.
  static std::vector<int> layer_sizes_for(int dim, int hidden_layers, int width);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t layer_count() const { return weights_.size(); }
  std::size_t parameter_count() const;

  /// Layer k maps sizes[k] -> sizes[k + 1]; weight is sizes[k+1] x sizes[k].
  Eigen::MatrixXd& weight(std::size_t k) { return weights_[k]; }
  const Eigen::MatrixXd& weight(std::size_t k) const { return weights_[k]; }
  Eigen::VectorXd& bias(std::size_t k) { return biases_[k]; }
  const Eigen::VectorXd& bias(std::size_t k) const { return biases_[k]; }

  bool all_finite() const;

  /// eps(x, t) for the columns of x (d x n).
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, double t) const;
  /// Forward on pre-assembled inputs ((d + 1) x n, last row = t).
  Eigen::MatrixXd forward_inputs(const Eigen::MatrixXd& inputs) const;

  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

double gelu(double z);
double gelu_derivative(double z);

/// Gradients with the same layout as Mlp parameters.
struct MlpGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

/// Mean-per-dimension squared error of net(inputs) against targets, and its
/// gradient with respect to every parameter.
double loss_and_gradient(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                         MlpGradient& grad);
double mean_squared_error(const Mlp& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);

/// Arithmetic used inside the training loop. Trained parameters are always
/// stored and evaluated in double.
enum class TrainPrecision { float32, float64 };

const char* to_string(TrainPrecision p);
TrainPrecision train_precision_from_string(const std::string& name);

/// Weight initialisation. fan_in_uniform draws weights and biases from
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual framework default for dense layers.
enum class WeightInit { lecun_normal, fan_in_uniform };

const char* to_string(WeightInit init);
WeightInit weight_init_from_string(const std::string& name);

struct TrainConfig {
  int n_train = 50000;
  int n_iters = 15000;
  double lr_start = 1e-5;
  double lr_end = 1e-6;
  int batch_size = 128;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  TrainPrecision precision = TrainPrecision::float32;
  WeightInit init = WeightInit::lecun_normal;

  void validate() const;
  /// lr_start * (lr_end / lr_start)^(k / n_iters).
  double learning_rate(int k) const;
};

struct Architecture {
  int hidden_layers = 2;
  int width = 200;
};

/// Noise-prediction triples (x_t, t) -> xi with x_t = alpha(t) x0 + sigma(t) xi.
struct TrainingSet {
  Eigen::MatrixXd inputs;   // (d + 1) x n
  Eigen::MatrixXd targets;  // d x n
};

TrainingSet make_training_set(const GaussianData& data, const LinearBetaSchedule& sched, int n,
                              std::uint64_t seed);

struct LossReport {
  std::vector<double> curve;  // minibatch loss per iteration
  double initial_loss = 0.0;  // full training set, before the first step
  double final_train_loss = 0.0;
  double final_fresh_loss = 0.0;  // independent triples of the same size
  double optimal_loss = 0.0;
};

struct TrainResult {
  Mlp net;
  LossReport report;
};

/// Adam on the noise-prediction loss. Throws NumericError if a minibatch loss
/// becomes non-finite or exceeds 10x the initial loss.
TrainResult train_noise_predictor(const TrainConfig& cfg, const Architecture& arch, const GaussianData& data,
                                  const LinearBetaSchedule& sched);

/// Bayes-optimal per-dimension loss E_t[(1/d) tr Var(xi | x_t, t)] with
/// Var(xi | x_t, t) = I - sigma^2 (alpha^2 Sigma + sigma^2 I)^{-1}, t ~ U[0, 1].
double optimal_loss_oracle(const GaussianData& data, const LinearBetaSchedule& sched);
/// The integrand above at a single t.
double optimal_loss_integrand(const GaussianData& data, const LinearBetaSchedule& sched, double t);

inline constexpr const char* kCheckpointFormat = "opsplit-mlp";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Mlp net;
  std::optional<TrainConfig> train_config;
};

void save_checkpoint(const std::filesystem::path& path, const Mlp& net, const TrainConfig* cfg = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace opsplit
