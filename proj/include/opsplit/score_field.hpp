#pragma once

#include <functional>
#include <memory>

#include <Eigen/Dense>

#include "opsplit/schedule.hpp"

namespace opsplit {

class Mlp;

/// Gaussian data law N(mu, Sigma).
struct GaussianData {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma_mat;

  Eigen::Index dim() const { return mu.size(); }
  /// Symmetric to 1e-12 and positive definite, else ConfigError.
  void validate() const;

  /// mu = (1, -1), Sigma = [[1.5, 0.6], [0.6, 0.8]].
  static GaussianData testbed_2d();
};

/// Forward-process marginal q(., t) of Gaussian data: N(alpha mu, alpha^2 Sigma + sigma^2 I).
struct MarginalLaw {
  double t = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

MarginalLaw marginal_law(const GaussianData& data, const LinearBetaSchedule& sched, double t);

/// -(alpha^2 Sigma + sigma^2 I)^{-1} (x - alpha mu) for each column of x.
Eigen::MatrixXd exact_score(const GaussianData& data, const LinearBetaSchedule& sched,
                            const Eigen::MatrixXd& x, double t);

enum class ScoreKind { exact_gaussian, learned_mlp, custom };

const char* to_string(ScoreKind kind);

/// A score field s(x, t) together with its noise-prediction view
/// eps(x, t) = -sigma(t) s(x, t). Inputs are d x n matrices whose columns are
/// points sharing one time t. Implementations are immutable after construction
/// and safe to evaluate concurrently.
class ScoreField {
 public:
  virtual ~ScoreField() = default;

  virtual ScoreKind kind() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual const LinearBetaSchedule& schedule() const = 0;

  virtual Eigen::MatrixXd score(const Eigen::MatrixXd& x, double t) const = 0;
  virtual Eigen::MatrixXd noise(const Eigen::MatrixXd& x, double t) const = 0;

  /// True when the field is natively a noise predictor, so the drift should be
  /// formed from eps instead of s.
  virtual bool prefers_noise_view() const { return false; }

  /// d x d Jacobian of the score at a single point. The default is a central
  /// difference with step kJacobianStep in each coordinate.
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, double t) const;

  static constexpr double kJacobianStep = 1e-4;
};

/// Analytic score of Gaussian data under the forward process.
class ExactGaussianScore final : public ScoreField {
 public:
  ExactGaussianScore(GaussianData data, LinearBetaSchedule sched);

  ScoreKind kind() const override { return ScoreKind::exact_gaussian; }
  Eigen::Index dim() const override { return data_.dim(); }
  const LinearBetaSchedule& schedule() const override { return sched_; }

  Eigen::MatrixXd score(const Eigen::MatrixXd& x, double t) const override;
  Eigen::MatrixXd noise(const Eigen::MatrixXd& x, double t) const override;
  /// Constant in x: -(alpha^2 Sigma + sigma^2 I)^{-1}.
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, double t) const override;

  const GaussianData& data() const { return data_; }
  /// (alpha^2 Sigma + sigma^2 I)^{-1}.
  Eigen::MatrixXd precision(double t) const;

 private:
  GaussianData data_;
  LinearBetaSchedule sched_;
};

/// Score from a trained noise predictor: s = -eps / sigma. Below
/// kMinSigma the division uses kMinSigma.
class NoisePredictorScore final : public ScoreField {
 public:
  NoisePredictorScore(std::shared_ptr<const Mlp> net, LinearBetaSchedule sched);

  ScoreKind kind() const override { return ScoreKind::learned_mlp; }
  Eigen::Index dim() const override;
  const LinearBetaSchedule& schedule() const override { return sched_; }

  Eigen::MatrixXd score(const Eigen::MatrixXd& x, double t) const override;
  Eigen::MatrixXd noise(const Eigen::MatrixXd& x, double t) const override;
  bool prefers_noise_view() const override { return true; }

  const Mlp& net() const { return *net_; }

  static constexpr double kMinSigma = 1e-6;

 private:
  std::shared_ptr<const Mlp> net_;
  LinearBetaSchedule sched_;
};

/// Black-box score given by a callable; the noise view is derived from it.
class CallableScore final : public ScoreField {
 public:
  using Fn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)>;

  CallableScore(Eigen::Index dim, LinearBetaSchedule sched, Fn fn);

  ScoreKind kind() const override { return ScoreKind::custom; }
  Eigen::Index dim() const override { return dim_; }
  const LinearBetaSchedule& schedule() const override { return sched_; }

  Eigen::MatrixXd score(const Eigen::MatrixXd& x, double t) const override { return fn_(x, t); }
  Eigen::MatrixXd noise(const Eigen::MatrixXd& x, double t) const override;

 private:
  Eigen::Index dim_;
  LinearBetaSchedule sched_;
  Fn fn_;
};

/// s = 0 everywhere; the PF-ODE reduces to its linear part.
std::shared_ptr<CallableScore> make_zero_score(Eigen::Index dim, const LinearBetaSchedule& sched);

inline Eigen::MatrixXd score_jacobian(const ScoreField& field, const Eigen::VectorXd& x, double t) {
  return field.jacobian(x, t);
}

}  // namespace opsplit
