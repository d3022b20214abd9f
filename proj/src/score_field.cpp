#include "opsplit/score_field.hpp"

#include <algorithm>
#include <cmath>

#include "opsplit/errors.hpp"
#include "opsplit/mlp.hpp"

namespace opsplit {

void GaussianData::validate() const {
  const auto d = mu.size();
  if (d == 0) throw ConfigError("data: empty mean vector");
  if (sigma_mat.rows() != d || sigma_mat.cols() != d) throw ConfigError("data: covariance shape does not match mean");
  if (!mu.allFinite() || !sigma_mat.allFinite()) throw ConfigError("data: non-finite parameters");
  if ((sigma_mat - sigma_mat.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw ConfigError("data: covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma_mat, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) throw ConfigError("data: covariance is not positive definite");
}

GaussianData GaussianData::testbed_2d() {
  GaussianData g;
  g.mu = Eigen::Vector2d(1.0, -1.0);
  g.sigma_mat = (Eigen::Matrix2d() << 1.5, 0.6, 0.6, 0.8).finished();
  return g;
}

MarginalLaw marginal_law(const GaussianData& data, const LinearBetaSchedule& sched, double t) {
  const ScheduleEval s = eval_schedule(sched, t);
  MarginalLaw law;
  law.t = t;
  law.mean = s.alpha * data.mu;
  law.cov = (s.alpha * s.alpha) * data.sigma_mat;
  law.cov.diagonal().array() += s.sigma * s.sigma;
  return law;
}

namespace {

Eigen::LLT<Eigen::MatrixXd> factor_cov(const MarginalLaw& law) {
  Eigen::LLT<Eigen::MatrixXd> llt(law.cov);
  if (llt.info() != Eigen::Success) {
    throw NumericError("marginal covariance factorization failed at t = " + std::to_string(law.t));
  }
  return llt;
}

}  // namespace

Eigen::MatrixXd exact_score(const GaussianData& data, const LinearBetaSchedule& sched,
                            const Eigen::MatrixXd& x, double t) {
  const MarginalLaw law = marginal_law(data, sched, t);
  const auto llt = factor_cov(law);
  return -llt.solve(x.colwise() - law.mean);
}

const char* to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::exact_gaussian:
      return "exact-gaussian";
    case ScoreKind::learned_mlp:
      return "learned-mlp";
    case ScoreKind::custom:
      return "custom";
  }
  return "unknown";
}

Eigen::MatrixXd ScoreField::jacobian(const Eigen::VectorXd& x, double t) const {
  const Eigen::Index d = x.size();
  // Columns 2k and 2k+1 hold x + h e_k and x - h e_k.
  Eigen::MatrixXd probes(d, 2 * d);
  for (Eigen::Index k = 0; k < d; ++k) {
    probes.col(2 * k) = x;
    probes.col(2 * k + 1) = x;
    probes(k, 2 * k) += kJacobianStep;
    probes(k, 2 * k + 1) -= kJacobianStep;
  }
  const Eigen::MatrixXd s = score(probes, t);
  Eigen::MatrixXd jac(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    jac.col(k) = (s.col(2 * k) - s.col(2 * k + 1)) / (2.0 * kJacobianStep);
  }
  return jac;
}

ExactGaussianScore::ExactGaussianScore(GaussianData data, LinearBetaSchedule sched)
    : data_(std::move(data)), sched_(sched) {
  data_.validate();
  sched_.validate();
}

Eigen::MatrixXd ExactGaussianScore::score(const Eigen::MatrixXd& x, double t) const {
  return exact_score(data_, sched_, x, t);
}

Eigen::MatrixXd ExactGaussianScore::noise(const Eigen::MatrixXd& x, double t) const {
  const double sigma = eval_schedule(sched_, t).sigma;
  return -sigma * score(x, t);
}

Eigen::MatrixXd ExactGaussianScore::precision(double t) const {
  const MarginalLaw law = marginal_law(data_, sched_, t);
  const auto llt = factor_cov(law);
  return llt.solve(Eigen::MatrixXd::Identity(dim(), dim()));
}

Eigen::MatrixXd ExactGaussianScore::jacobian(const Eigen::VectorXd&, double t) const { return -precision(t); }

NoisePredictorScore::NoisePredictorScore(std::shared_ptr<const Mlp> net, LinearBetaSchedule sched)
    : net_(std::move(net)), sched_(sched) {
  if (!net_) throw ConfigError("learned score: null network");
  sched_.validate();
}

Eigen::Index NoisePredictorScore::dim() const { return net_->output_dim(); }

Eigen::MatrixXd NoisePredictorScore::noise(const Eigen::MatrixXd& x, double t) const {
  return net_->forward(x, t);
}

Eigen::MatrixXd NoisePredictorScore::score(const Eigen::MatrixXd& x, double t) const {
  const double sigma = std::max(eval_schedule(sched_, t).sigma, kMinSigma);
  return -noise(x, t) / sigma;
}

CallableScore::CallableScore(Eigen::Index dim, LinearBetaSchedule sched, Fn fn)
    : dim_(dim), sched_(sched), fn_(std::move(fn)) {
  if (!fn_) throw ConfigError("callable score: empty function");
}

Eigen::MatrixXd CallableScore::noise(const Eigen::MatrixXd& x, double t) const {
  const double sigma = eval_schedule(sched_, t).sigma;
  return -sigma * fn_(x, t);
}

std::shared_ptr<CallableScore> make_zero_score(Eigen::Index dim, const LinearBetaSchedule& sched) {
  return std::make_shared<CallableScore>(
      dim, sched, [](const Eigen::MatrixXd& x, double) { return Eigen::MatrixXd::Zero(x.rows(), x.cols()); });
}

}  // namespace opsplit
