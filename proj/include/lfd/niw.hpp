#pragma once

// Normal-Inverse-Wishart conjugate machinery: streaming sufficient
// statistics and the multivariate Student-T posterior predictive.

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "core_data.hpp"

namespace lfd {

struct NIWParams {
  Vec m0;
  double kappa0 = 1.0;
  Mat S0;
  double nu0 = 4.0;

  Eigen::Index dim() const { return m0.size(); }

  void validate() const {
    const auto d = static_cast<double>(dim());
    if (!(kappa0 > 0.0)) throw std::invalid_argument("NIW kappa0 must be positive");
    if (!(nu0 > d + 1.0)) throw std::invalid_argument("NIW nu0 must exceed dim + 1");
    if (S0.rows() != dim() || S0.cols() != dim()) throw std::invalid_argument("NIW S0 shape mismatch");
    Eigen::LLT<Mat> llt(S0);
    if (llt.info() != Eigen::Success || !S0.isApprox(S0.transpose())) throw std::invalid_argument("NIW S0 not SPD");
  }

  // Weakly informative default: prior mean at the data mean, prior covariance
  // expectation equal to the pooled per-dimension variance.
  static NIWParams weak(const Vec& mean, const Vec& variance, double kappa0 = 1.0) {
    NIWParams p;
    const auto d = static_cast<double>(mean.size());
    p.m0 = mean;
    p.kappa0 = kappa0;
    p.nu0 = d + 2.0;
    Vec var = variance.cwiseMax(1e-12);
    p.S0 = Mat(var.asDiagonal()) * (p.nu0 - d - 1.0);
    return p;
  }
};

// Count, sum and uncentered scatter of the assigned observations.
struct ClusterStats {
  int count = 0;
  Vec sum;
  Mat scatter;

  ClusterStats() = default;
  explicit ClusterStats(Eigen::Index dim) : sum(Vec::Zero(dim)), scatter(Mat::Zero(dim, dim)) {}

  void add(const Vec& x) {
    ++count;
    sum += x;
    scatter.noalias() += x * x.transpose();
  }
  void remove(const Vec& x) {
    --count;
    sum -= x;
    scatter.noalias() -= x * x.transpose();
    if (count == 0) {
      sum.setZero();
      scatter.setZero();
    }
  }

  Vec mean() const { return count > 0 ? Vec(sum / count) : Vec::Zero(sum.size()); }
};

struct NIWPosterior {
  Vec m;
  double kappa = 0.0;
  double nu = 0.0;
  Mat S;
};

inline NIWPosterior niw_update(const ClusterStats& st, const NIWParams& prior) {
  NIWPosterior post;
  const double n = st.count;
  post.kappa = prior.kappa0 + n;
  post.nu = prior.nu0 + n;
  post.m = (prior.kappa0 * prior.m0 + st.sum) / post.kappa;
  post.S = prior.S0 + st.scatter + prior.kappa0 * prior.m0 * prior.m0.transpose() - post.kappa * post.m * post.m.transpose();
  post.S = 0.5 * (post.S + post.S.transpose());
  return post;
}

// Multivariate Student-T with a cached Cholesky factor.
class StudentT {
 public:
  StudentT() = default;
  StudentT(Vec loc, const Mat& scale, double dof) : loc_(std::move(loc)), dof_(dof) { factor(scale); }

  double log_density(const Vec& x) const {
    const double d = static_cast<double>(loc_.size());
    const Vec z = llt_.matrixL().solve(x - loc_);
    const double maha = z.squaredNorm();
    return norm_const_ - 0.5 * (dof_ + d) * std::log1p(maha / dof_);
  }

  const Vec& loc() const { return loc_; }
  double dof() const { return dof_; }
  bool regularized() const { return regularized_; }

 private:
  void factor(Mat scale) {
    const auto d = scale.rows();
    llt_.compute(scale);
    if (llt_.info() != Eigen::Success) {
      const double floor = 1e-9 * std::max(1.0, scale.diagonal().cwiseAbs().maxCoeff());
      for (int attempt = 0; attempt < 12 && llt_.info() != Eigen::Success; ++attempt) {
        scale += std::pow(10.0, attempt) * floor * Mat::Identity(d, d);
        llt_.compute(scale);
      }
      regularized_ = true;
      if (llt_.info() != Eigen::Success) throw std::runtime_error("Student-T scale could not be regularized");
    }
    const double logdet = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    const double dd = static_cast<double>(d);
    norm_const_ = std::lgamma(0.5 * (dof_ + dd)) - std::lgamma(0.5 * dof_) - 0.5 * dd * std::log(dof_ * std::numbers::pi) -
                  0.5 * logdet;
  }

  Vec loc_;
  double dof_ = 1.0;
  Eigen::LLT<Mat> llt_;
  double norm_const_ = 0.0;
  bool regularized_ = false;
};

inline StudentT niw_predictive(const ClusterStats& st, const NIWParams& prior) {
  const NIWPosterior post = niw_update(st, prior);
  const double d = static_cast<double>(prior.dim());
  const double dof = post.nu - d + 1.0;
  const Mat scale = post.S * (post.kappa + 1.0) / (post.kappa * dof);
  return StudentT(post.m, scale, dof);
}

inline double niw_posterior_predictive(const ClusterStats& st, const NIWParams& prior, const Vec& x) {
  if (x.size() != prior.dim()) throw std::invalid_argument("predictive: dimension mismatch");
  return niw_predictive(st, prior).log_density(x);
}

// Posterior-mean plug-in (mean, covariance) of the NIW posterior.
inline std::pair<Vec, Mat> niw_posterior_mean(const ClusterStats& st, const NIWParams& prior) {
  const NIWPosterior post = niw_update(st, prior);
  const double d = static_cast<double>(prior.dim());
  return {post.m, post.S / (post.nu - d - 1.0)};
}

inline double gaussian_logpdf(const Vec& x, const Vec& mu, const Eigen::LLT<Mat>& llt) {
  const double d = static_cast<double>(mu.size());
  const Vec z = llt.matrixL().solve(x - mu);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

// log NIW density at (mu, Sigma), used to score plug-in parameters.
inline double niw_log_density(const NIWParams& p, const Vec& mu, const Mat& sigma) {
  const double d = static_cast<double>(p.dim());
  Eigen::LLT<Mat> ls(sigma);
  const double logdet_sigma = 2.0 * ls.matrixLLT().diagonal().array().log().sum();
  Eigen::LLT<Mat> lS(p.S0);
  const double logdet_S0 = 2.0 * lS.matrixLLT().diagonal().array().log().sum();
  const Mat sinv_S0 = ls.solve(p.S0);
  double log_mvgamma = 0.25 * d * (d - 1.0) * std::log(std::numbers::pi);
  for (int j = 1; j <= static_cast<int>(d); ++j) log_mvgamma += std::lgamma(0.5 * (p.nu0 + 1.0 - j));
  const double log_iw = 0.5 * p.nu0 * logdet_S0 - 0.5 * p.nu0 * d * std::log(2.0) - log_mvgamma -
                        0.5 * (p.nu0 + d + 1.0) * logdet_sigma - 0.5 * sinv_S0.trace();
  Eigen::LLT<Mat> lm(sigma / p.kappa0);
  return log_iw + gaussian_logpdf(mu, p.m0, lm);
}

}  // namespace lfd
